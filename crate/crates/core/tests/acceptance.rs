//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process exits non-zero if any check fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use efb_core::baselines::{baseline_pilots, hp_sub_beamform, AngleDictionary, Baseline, BaselineVariant, SensingMatrix};
use efb_core::efb::{
    normalize_power, pilot_matrix, quantize, receive_on_tape, sum_rate, sum_rate_loss, surrogate_slope, ArchConfig,
    EfbModel, FeedbackBits, ForwardOptions, QuantizerMode, SeBlock, TrainConfig, Trainer,
};
use efb_core::eval::{self, complexity, EvalReport, FlopConvention, Method, TestSet};
use efb_core::nn::{
    BatchNorm1d, Conv1d, Dense, LayerNorm, Mode, ParamStore, Tape, Tensor, TransformerDims, TransformerLayer,
};
use efb_core::rng::stream_rng;
use efb_core::sysmodel::{complex_gaussian, sample_batch, sample_channel};
use efb_core::{Complex64, SystemConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::{direct_sum_rate, explicit_precoders, input_grad_error, param_grad_error, probe, random_tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_beamformer_inputs<R: Rng>(rng: &mut R, k: usize, nm: usize) -> (DVector<f64>, DMatrix<Complex64>) {
    let theta = DVector::from_fn(k * nm, |_, _| rng.random_range(-PI..PI));
    let d = DMatrix::from_fn(k, k, |_, _| complex_gaussian(rng, 1.0));
    (theta, d)
}

fn power_constraint() -> Outcome {
    let mut rng = stream_rng(11, 0);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let power = [0.5, 1.0, 4.0][i % 3];
        let (theta, d_raw) = random_beamformer_inputs(&mut rng, 2, 32);
        let bf = normalize_power(theta.clone(), d_raw, power, 32).unwrap();
        let w = explicit_precoders(theta.as_slice(), &bf.d);
        worst = worst.max((w.norm_squared() / power - 1.0).abs());
    }
    // The same through the trained-or-not decoder on random bit patterns.
    let cfg = SystemConfig::default();
    let model = EfbModel::new(cfg, ArchConfig::default(), 11).unwrap();
    let bits: Vec<FeedbackBits> = (0..1000)
        .map(|_| FeedbackBits {
            bits: DMatrix::from_fn(cfg.n_users, cfg.n_bits, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
        })
        .collect();
    for bf in model.decode_bits(&bits).unwrap() {
        let w = explicit_precoders(bf.theta_a.as_slice(), &bf.d);
        worst = worst.max((w.norm_squared() / cfg.power - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("max relative power error {worst:.2e} over 2000 beamformers"))
}

fn sum_rate_oracle() -> Outcome {
    let cfg = SystemConfig { n_antennas: 4, n_users: 2, ..Default::default() };
    let mut rng = stream_rng(12, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ch = sample_channel(&cfg, &mut rng);
        let (theta, d_raw) = random_beamformer_inputs(&mut rng, 2, 2);
        let bf = normalize_power(theta.clone(), d_raw, 1.0, 2).unwrap();
        let direct = direct_sum_rate(&ch.channels, &explicit_precoders(theta.as_slice(), &bf.d), cfg.noise_var());
        worst = worst.max((sum_rate(&ch, &bf, cfg.noise_var()).unwrap() - direct).abs());
    }
    let single = SystemConfig { n_antennas: 4, n_users: 1, ..Default::default() };
    let mut single_worst: f64 = 0.0;
    for _ in 0..100 {
        let ch = sample_channel(&single, &mut rng);
        let (theta, d_raw) = random_beamformer_inputs(&mut rng, 1, 4);
        let bf = normalize_power(theta.clone(), d_raw, 1.0, 4).unwrap();
        let w = explicit_precoders(theta.as_slice(), &bf.d);
        let g: Complex64 = (0..4).map(|n| ch.channels[(0, n)].conj() * w[(n, 0)]).sum();
        let expected = (1.0 + g.norm_sqr() / single.noise_var()).log2();
        single_worst = single_worst.max((sum_rate(&ch, &bf, single.noise_var()).unwrap() - expected).abs());
    }
    outcome(
        worst <= 1e-9 && single_worst <= 1e-12,
        format!("K=2 max abs diff {worst:.2e}; K=1 max abs diff {single_worst:.2e}"),
    )
}

fn gradient_suite() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };
    for seed in 1..=3u64 {
        let mut rng = stream_rng(seed, 13);

        let mut store = ParamStore::new();
        let dense = Dense::new(&mut store, &mut rng, "dense", 5, 4, true);
        let x = random_tensor(&[3, 5], seed);
        record("dense", input_grad_error(&x, |t, x| {
            let y = dense.forward(t, &store, x).unwrap();
            probe(t, y, seed)
        }));
        record("dense", param_grad_error(&store, 50, |t, s| {
            let x = t.constant(x.clone());
            let y = dense.forward(t, s, x).unwrap();
            probe(t, y, seed)
        }));

        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, &mut rng, "conv", 2, 3, 5).unwrap();
        let x = random_tensor(&[2, 2, 7], seed);
        record("conv1d", input_grad_error(&x, |t, x| {
            let y = conv.forward(t, &store, x).unwrap();
            probe(t, y, seed)
        }));
        record("conv1d", param_grad_error(&store, 50, |t, s| {
            let x = t.constant(x.clone());
            let y = conv.forward(t, s, x).unwrap();
            probe(t, y, seed)
        }));

        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 4);
        let x = random_tensor(&[6, 4], seed);
        record("batch_norm", input_grad_error(&x, |t, x| {
            let y = bn.forward(t, &store, x, Mode::Train).unwrap();
            probe(t, y, seed)
        }));
        record("batch_norm", param_grad_error(&store, 50, |t, s| {
            let x = t.constant(x.clone());
            let y = bn.forward(t, s, x, Mode::Train).unwrap();
            probe(t, y, seed)
        }));

        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 6);
        let x = random_tensor(&[2, 3, 6], seed);
        record("layer_norm", input_grad_error(&x, |t, x| {
            let y = ln.forward(t, &store, x).unwrap();
            probe(t, y, seed)
        }));

        let q = random_tensor(&[2, 4, 6], seed);
        let (k, v) = (random_tensor(&[2, 4, 6], seed + 10), random_tensor(&[2, 4, 6], seed + 20));
        record("attention", input_grad_error(&q, |t, q| {
            let (k, v) = (t.constant(k.clone()), t.constant(v.clone()));
            let y = t.attention(q, k, v, 2).unwrap();
            probe(t, y, seed)
        }));
        record("attention", input_grad_error(&k, |t, k| {
            let (q, v) = (t.constant(q.clone()), t.constant(v.clone()));
            let y = t.attention(q, k, v, 2).unwrap();
            probe(t, y, seed)
        }));
        record("attention", input_grad_error(&v, |t, v| {
            let (q, k) = (t.constant(q.clone()), t.constant(k.clone()));
            let y = t.attention(q, k, v, 2).unwrap();
            probe(t, y, seed)
        }));

        let mut store = ParamStore::new();
        let dims = TransformerDims { model_dim: 8, heads: 2, ff_dim: 12 };
        let layer = TransformerLayer::new(&mut store, &mut rng, "tf", dims).unwrap();
        let x = random_tensor(&[2, 5, 8], seed);
        record("transformer", input_grad_error(&x, |t, x| {
            let y = layer.forward(t, &store, x).unwrap();
            probe(t, y, seed)
        }));
        record("transformer", param_grad_error(&store, 20, |t, s| {
            let x = t.constant(x.clone());
            let y = layer.forward(t, s, x).unwrap();
            probe(t, y, seed)
        }));

        let mut store = ParamStore::new();
        let se = SeBlock::new(&mut store, &mut rng, "se", 4, 2).unwrap();
        let x = random_tensor(&[1, 4, 6], seed);
        record("se_block", input_grad_error(&x, |t, x| {
            let y = se.forward(t, &store, x).unwrap();
            probe(t, y, seed)
        }));
        record("se_block", param_grad_error(&store, 50, |t, s| {
            let x = t.constant(x.clone());
            let y = se.forward(t, s, x).unwrap();
            probe(t, y, seed)
        }));

        let x = random_tensor(&[3, 5], seed);
        record("quantizer_surrogate", input_grad_error(&x, |t, x| {
            let y = quantize(t, x, QuantizerMode::Surrogate);
            probe(t, y, seed)
        }));

        let sys = SystemConfig { n_antennas: 6, n_users: 2, n_pilots: 3, ..Default::default() };
        let batch = sample_batch(&sys, &mut rng, 3);
        let noise: Vec<_> = (0..3).map(|_| DMatrix::from_fn(2, 3, |_, _| complex_gaussian(&mut rng, 0.1))).collect();
        let theta = random_tensor(&[6, 3], seed);
        record("pilot_reception", input_grad_error(&theta, |t, th| {
            let y = receive_on_tape(t, th, 1.0, &batch, &noise, 1).unwrap();
            probe(t, y, seed)
        }));

        let (theta_a, d_raw) = (random_tensor(&[3, 6], seed), random_tensor(&[3, 8], seed + 1));
        record("sum_rate_loss", input_grad_error(&theta_a, |t, th| {
            let d = t.constant(d_raw.clone());
            sum_rate_loss(t, th, d, &batch, 1.0, 0.1).unwrap().0
        }));
        record("sum_rate_loss", input_grad_error(&d_raw, |t, d| {
            let th = t.constant(theta_a.clone());
            sum_rate_loss(t, th, d, &batch, 1.0, 0.1).unwrap().0
        }));

        let sys = SystemConfig { n_antennas: 4, n_users: 2, n_pilots: 3, n_bits: 4, ..Default::default() };
        let arch = ArchConfig {
            ff_dim: 6,
            transformer_layers: 1,
            encoder_hidden_per_bit: 2,
            decoder_hidden: 8,
            decoder_budget: 8,
            ..Default::default()
        };
        let model = EfbModel::new(sys, arch, seed).unwrap();
        let batch = sample_batch(&sys, &mut rng, 4);
        let noise = model.draw_noise(&mut rng, 4, sys.noise_var());
        let opts = ForwardOptions { mode: Mode::Train, quantizer: QuantizerMode::Surrogate };
        record("end_to_end_surrogate", param_grad_error(&model.store, 8, |t, s| {
            let m = EfbModel { store: s.clone(), ..model.clone() };
            m.loss_with_noise(t, &batch, &noise, sys.noise_var(), opts).unwrap().loss
        }));
    }
    // Straight-through factor of the hard quantizer at 0.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let q = quantize(&mut tape, x, QuantizerMode::Hard);
    tape.backward(q).unwrap();
    let factor = tape.grad(x).unwrap()[0];
    let pass = worst.iter().all(|(_, e)| *e < 1e-3) && factor == 0.5 && surrogate_slope(0.0) == 0.5;
    let list: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(pass, format!("max rel err over 3 seeds: {}; STE factor at 0 = {factor}", list.join(", ")))
}

fn hp_sub_closed_form() -> Outcome {
    let single = SystemConfig { n_antennas: 16, n_users: 1, ..Default::default() };
    let mut rng = stream_rng(14, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ch = sample_channel(&single, &mut rng);
        let bf = hp_sub_beamform(&ch.channels, single.power).unwrap();
        let s: f64 = ch.channels.iter().map(|z| z.norm()).sum();
        let expected = (1.0 + single.power * s * s / (16.0 * single.noise_var())).log2();
        worst = worst.max((sum_rate(&ch, &bf, single.noise_var()).unwrap() - expected).abs());
    }
    let multi = SystemConfig { n_antennas: 16, n_users: 2, ..Default::default() };
    let mut leak: f64 = 0.0;
    for _ in 0..100 {
        let ch = sample_channel(&multi, &mut rng);
        let bf = hp_sub_beamform(&ch.channels, multi.power).unwrap();
        let g = ch.channels.conjugate() * explicit_precoders(bf.theta_a.as_slice(), &bf.d);
        let eff = ch.channels.conjugate() * explicit_precoders(bf.theta_a.as_slice(), &DMatrix::identity(2, 2));
        leak = leak.max(g[(0, 1)].norm().max(g[(1, 0)].norm()) / eff.norm());
    }
    outcome(
        worst <= 1e-9 && leak <= 1e-9,
        format!("K=1 max abs gap {worst:.2e}; K=2 max interference / ||H_eff|| {leak:.2e}"),
    )
}

fn omp_exactness() -> Outcome {
    let (nt, l) = (16, 4);
    let dict = AngleDictionary::new(nt, 16 * nt, 0.5).unwrap();
    let mut rng = stream_rng(15, 0);
    let (mut recovered, mut monotone, mut brute_agrees) = (0, 0, 0);
    let mut worst_gain: f64 = 0.0;
    for _ in 0..100 {
        let theta: Vec<f64> = (0..nt * l).map(|_| rng.random_range(-PI..PI)).collect();
        let pilots = pilot_matrix(&theta, nt, l, 1.0);
        let sensing = SensingMatrix::new(&pilots, dict.clone()).unwrap();
        // The grid ends alias onto each other at half-wavelength spacing.
        let truth = rng.random_range(1..dict.len() - 1);
        let alpha = complex_gaussian(&mut rng, 1.0);
        let h = dict.atoms.column(truth) * alpha;
        let y = (h.adjoint() * &pilots).transpose();
        let est = sensing.estimate(&y, 1).unwrap();
        let gain_err = (est.gains[0] - alpha).norm();
        worst_gain = worst_gain.max(gain_err);
        if (est.aods[0] - dict.grid[truth]).abs() <= 1e-6 && gain_err <= 1e-6 {
            recovered += 1;
        }
        let target = y.conjugate();
        let brute = (0..dict.len())
            .map(|g| {
                let col = sensing.phi.column(g);
                let c = col.dotc(&target) / Complex64::from(col.norm_squared());
                (g, (&target - col * c).norm())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        if dict.grid[brute] == est.aods[0] {
            brute_agrees += 1;
        }
        let noisy = y.map(|z| z + complex_gaussian(&mut rng, 0.1));
        let trace = sensing.pursue(&noisy, l).unwrap();
        if trace.residual_norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)) {
            monotone += 1;
        }
    }
    outcome(
        recovered == 100 && monotone == 100 && brute_agrees == 100,
        format!(
            "exact recovery {recovered}/100 (max gain error {worst_gain:.1e}), brute-force argmax agrees {brute_agrees}/100, \
             monotone residuals {monotone}/100"
        ),
    )
}

fn baseline_ordering() -> Outcome {
    let base = SystemConfig::default();
    let test = TestSet::generate(&base, 16, 10_000);
    let report = |v: BaselineVariant, b: usize| -> EvalReport {
        let cfg = SystemConfig { n_bits: b, ..base };
        let rates = Baseline::new(v, cfg, baseline_pilots(&cfg, 16)).unwrap().rates(&test.channels, &test.noise).unwrap();
        EvalReport::from_rates(v.name(), cfg, &rates).unwrap()
    };
    let full = report(BaselineVariant::FullCsi, 10);
    let inf = report(BaselineVariant::OmpInfinite, 10);
    let finite: Vec<EvalReport> = [10, 20, 30, 40].iter().map(|&b| report(BaselineVariant::OmpFinite, b)).collect();
    let ordered = full.mean_rate >= inf.mean_rate && finite.iter().all(|f| inf.mean_rate >= f.mean_rate);
    let increasing = finite.windows(2).all(|w| w[1].mean_rate >= w[0].mean_rate - w[0].stderr.max(w[1].stderr));
    let finite_list: Vec<String> =
        finite.iter().map(|f| format!("B={} {:.3}+-{:.3}", f.config.n_bits, f.mean_rate, f.stderr)).collect();
    outcome(
        ordered && increasing,
        format!(
            "full_csi {:.3}, omp_infinite {:.3}, omp_finite {}",
            full.mean_rate,
            inf.mean_rate,
            finite_list.join(", ")
        ),
    )
}

fn complexity_accounting() -> Outcome {
    let within = |value: f64, target: f64, tol: f64| (value / target - 1.0).abs() <= tol;
    let mut lines = Vec::new();
    let mut pass = true;
    // (B, per-UE params, total params, total FLOPs, per-UE FLOPs) published for the reference design.
    for (b, ue_params, total_params, total_flops, ue_flops) in
        [(10, 12e3, 849e3, 1021e3, 100e3), (40, 26e3, 821e3, 994e3, 114e3)]
    {
        let cfg = SystemConfig { n_users: 2, n_pilots: 8, n_bits: b, ..Default::default() };
        let model = EfbModel::new(cfg, ArchConfig::default(), 0).unwrap();
        let c = complexity(&model, FlopConvention::Macs);
        let checks = [
            within(c.params_per_ue as f64, ue_params, 0.2),
            within(c.params_total as f64, total_params, 0.2),
            within(c.flops_total as f64, total_flops, 0.3),
            within(c.flops_per_ue as f64, ue_flops, 0.3),
        ];
        pass &= checks.iter().all(|&x| x);
        lines.push(format!(
            "B={b}: params {}/{} (UE/total), FLOPs {}/{}",
            c.params_per_ue, c.params_total, c.flops_per_ue, c.flops_total
        ));
    }
    outcome(pass, lines.join("; "))
}

fn learning_trend() -> Outcome {
    let sys = SystemConfig { n_antennas: 16, n_users: 2, n_pilots: 4, n_bits: 10, snr_db: 10.0, ..Default::default() };
    let test_seed = 2024;
    let test = TestSet::generate(&sys, test_seed, 2000);
    let baseline = eval::evaluate_on(Method::Baseline(BaselineVariant::OmpFinite), &sys, &test, test_seed).unwrap();
    let mut wins = 0;
    let mut rates = Vec::new();
    for seed in 0..5 {
        let mut model = EfbModel::new(sys, ArchConfig::default(), seed).unwrap();
        let cfg = TrainConfig { epochs: 30, batches_per_epoch: 50, batch_size: 256, lr0: 1e-3, seed };
        let mut trainer = Trainer::new(&model, cfg).unwrap();
        trainer.run(&mut model, |_, _| Ok(())).unwrap();
        let learned = eval::evaluate_on(Method::Learned(&model), &sys, &test, test_seed).unwrap();
        if learned.mean_rate > baseline.mean_rate {
            wins += 1;
        }
        rates.push(format!("{:.3}", learned.mean_rate));
    }
    outcome(
        wins >= 4,
        format!(
            "learned beats omp_finite(B=10) = {:.3} in {wins}/5 seeds (learned: {})",
            baseline.mean_rate,
            rates.join(", ")
        ),
    )
}

fn determinism() -> Outcome {
    let sys = SystemConfig { n_antennas: 8, n_users: 2, n_pilots: 4, n_bits: 10, ..Default::default() };
    let run = || {
        let mut model = EfbModel::new(sys, ArchConfig::default(), 21).unwrap();
        let cfg = TrainConfig { epochs: 3, batches_per_epoch: 5, batch_size: 32, lr0: 1e-3, seed: 21 };
        let mut trainer = Trainer::new(&model, cfg).unwrap();
        let mut losses = Vec::new();
        for epoch in 0..cfg.epochs {
            for b in 0..cfg.batches_per_epoch {
                let (channels, noise) = trainer.batch(&model, epoch, b);
                losses.push(trainer.step(&mut model, &channels, &noise).unwrap().to_bits());
            }
        }
        let learned = eval::evaluate(Method::Learned(&model), &sys, 5, 500).unwrap();
        let omp = eval::evaluate(Method::Baseline(BaselineVariant::OmpFinite), &sys, 5, 500).unwrap();
        (losses, learned, omp)
    };
    let (a, b) = (run(), run());
    let same_losses = a.0 == b.0;
    let same_reports = a.1 == b.1 && a.2 == b.2 && a.1.mean_rate.to_bits() == b.1.mean_rate.to_bits();
    outcome(
        same_losses && same_reports,
        format!("{} loss values bit-identical: {same_losses}; evaluation reports identical: {same_reports}", a.0.len()),
    )
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("power normalisation is exact", power_constraint),
        ("sum rate matches direct evaluation", sum_rate_oracle),
        ("gradients match finite differences", gradient_suite),
        ("HP-sub closed forms", hp_sub_closed_form),
        ("OMP exact recovery", omp_exactness),
        ("baseline ordering", baseline_ordering),
        ("complexity accounting", complexity_accounting),
        ("learned feedback beats quantized OMP", learning_trend),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !result.pass {
            failures += 1;
        }
        println!(
            "acceptance {id} {name}: {} ({}; {:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
}

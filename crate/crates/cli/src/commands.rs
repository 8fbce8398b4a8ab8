use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use efb_core::baselines::{baseline_pilots, Baseline, BaselineVariant};
use efb_core::efb::{EfbModel, Trainer};
use efb_core::eval::{self, complexity, EvalReport, FlopConvention, Method, TestSet};
use efb_core::nn::Checkpoint;
use efb_core::rng::{stream_rng, STREAM_EVAL_CHANNELS};
use efb_core::sysmodel::{read_dataset, sample_batch, write_dataset};
use efb_core::{Error, SystemConfig};
use log::{info, warn};

use crate::config::RunConfig;

/// Mixed into the training seed to pick the holdout set, so that it never
/// coincides with a canonical test set of the same seed.
const HOLDOUT_SALT: u64 = 0x686f_6c64_6f75_74;

pub struct Shared {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overwrite: bool,
}

/// CSV writer that appends to `path` unless `overwrite`, emitting `header`
/// only when the file starts out empty.
fn open_csv(path: &Path, overwrite: bool, header: &[&str]) -> anyhow::Result<csv::Writer<File>> {
    let fresh = overwrite || std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!overwrite)
        .truncate(overwrite)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header)?;
    }
    Ok(w)
}

/// Writes through a sibling temporary file so that `path` is either the
/// complete new checkpoint or untouched.
fn save_checkpoint(ck: &Checkpoint, path: &Path) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    ck.save(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("moving checkpoint to {}", path.display()))?;
    Ok(())
}

pub fn load_model(cfg: &RunConfig, path: &Path) -> anyhow::Result<EfbModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mut model = EfbModel::new(ck.config, cfg.arch, 0)?;
    ck.load_into(&mut model.store)
        .with_context(|| format!("checkpoint {} does not fit the configured architecture", path.display()))?;
    Ok(model)
}

pub fn gen(cfg: &RunConfig, shared: &Shared, count: usize) -> anyhow::Result<()> {
    cfg.system.validate()?;
    let seed = shared.seed.unwrap_or(cfg.eval.test_seed);
    let out = shared.out.clone().unwrap_or_else(|| "channels.efbch".into());
    let s = &cfg.system;
    let channels = sample_batch(s, &mut stream_rng(seed, STREAM_EVAL_CHANNELS), count);
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset(BufWriter::new(file), s.n_antennas, s.n_users, s.n_paths, seed, &channels)?;
    println!("wrote {count} channels to {}", out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, shared: &Shared, log_path: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    if let Some(seed) = shared.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    let (sys, tc) = (cfg.system, cfg.training);
    let checkpoint = shared.out.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let log_path = log_path.unwrap_or_else(|| cfg.paths.train_log.clone());

    let mut model = EfbModel::new(sys, cfg.arch, tc.seed)?;
    let mut trainer = Trainer::new(&model, tc)?;
    let holdout = (cfg.eval.holdout_size > 0).then(|| TestSet::generate(&sys, tc.seed ^ HOLDOUT_SALT, cfg.eval.holdout_size));
    let mut log = open_csv(&log_path, shared.overwrite, &["step", "epoch", "lr", "loss", "holdout_rate"])?;
    info!(
        "training {} parameters for {} epochs x {} batches x {}",
        model.param_count(),
        tc.epochs,
        tc.batches_per_epoch,
        tc.batch_size
    );
    let every = cfg.eval.checkpoint_every;
    let result = trainer.run(&mut model, |m, st| {
        let rate = match &holdout {
            Some(h) => eval::evaluate_on(Method::Learned(m), &sys, h, tc.seed)?.mean_rate,
            None => f64::NAN,
        };
        info!("epoch {}: loss {:.4}, lr {:.3e}, holdout rate {rate:.4}", st.epoch, st.mean_loss, st.lr);
        log.write_record([
            st.step.to_string(),
            st.epoch.to_string(),
            st.lr.to_string(),
            st.mean_loss.to_string(),
            rate.to_string(),
        ])?;
        log.flush()?;
        if every > 0 && (st.epoch + 1) % every == 0 && st.epoch + 1 < tc.epochs {
            save_checkpoint(&Checkpoint::from_store(&sys, st.step, &m.store), &checkpoint)
                .map_err(|e| Error::Io(std::io::Error::other(format!("{e:#}"))))?;
        }
        Ok(())
    });
    match result {
        Ok(_) => {}
        Err(Error::Diverged { step, loss }) => {
            let mut dump = checkpoint.as_os_str().to_owned();
            dump.push(".diverged");
            let dump = PathBuf::from(dump);
            Checkpoint::from_store(&sys, step, &model.store).save(&dump)?;
            bail!("loss became {loss} at step {step}; parameters before the failing step saved to {}", dump.display());
        }
        Err(e) => return Err(e.into()),
    }
    save_checkpoint(&Checkpoint::from_store(&sys, trainer.step_count(), &model.store), &checkpoint)?;
    println!("wrote checkpoint {}", checkpoint.display());
    Ok(())
}

fn parse_methods(methods: &[String], have_checkpoints: bool) -> anyhow::Result<(bool, Vec<BaselineVariant>)> {
    let mut learned = false;
    let mut variants = Vec::new();
    for m in methods {
        match m.as_str() {
            "all" => {
                learned |= have_checkpoints;
                variants.extend(BaselineVariant::ALL);
            }
            "learned" => learned = true,
            other => variants.push(other.parse()?),
        }
    }
    variants.dedup();
    Ok((learned, variants))
}

pub fn eval(
    cfg: &RunConfig,
    shared: &Shared,
    methods: &[String],
    checkpoints: &[PathBuf],
    budgets: &[usize],
    test_size: Option<usize>,
) -> anyhow::Result<()> {
    let (learned, variants) = parse_methods(methods, !checkpoints.is_empty())?;
    let seed = shared.seed.unwrap_or(cfg.eval.test_seed);
    let size = test_size.unwrap_or(cfg.eval.test_size);
    let paths: Vec<PathBuf> = match (learned, checkpoints.is_empty()) {
        (false, _) => Vec::new(),
        (true, true) => vec![cfg.paths.checkpoint.clone()],
        (true, false) => checkpoints.to_vec(),
    };
    let models = paths.iter().map(|p| load_model(cfg, p)).collect::<anyhow::Result<Vec<_>>>()?;
    let mut budgets = budgets.to_vec();
    if budgets.is_empty() {
        budgets = models.iter().map(|m| m.config.n_bits).collect();
        budgets.dedup();
    }
    if budgets.is_empty() {
        budgets.push(cfg.system.n_bits);
    }
    for m in &models {
        if !budgets.contains(&m.config.n_bits) {
            budgets.push(m.config.n_bits);
        }
    }

    let mut reports: Vec<EvalReport> = Vec::new();
    for &b in &budgets {
        let base = models.iter().find(|m| m.config.n_bits == b).map_or(cfg.system, |m| m.config);
        let sys = SystemConfig { n_bits: b, ..base };
        sys.validate()?;
        let test = TestSet::generate(&sys, seed, size);
        for model in models.iter().filter(|m| m.config.n_bits == b) {
            reports.push(eval::evaluate_on(Method::Learned(model), &sys, &test, seed)?);
        }
        for &v in &variants {
            match eval::evaluate_on(Method::Baseline(v), &sys, &test, seed) {
                Ok(r) => reports.push(r),
                Err(Error::Config(msg)) if v == BaselineVariant::OmpFinite => {
                    warn!("skipping {v} at B = {b}: {msg}");
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    for r in &reports {
        println!("{:<13} B={:<3} mean {:.4} +- {:.4} (n = {})", r.method, r.config.n_bits, r.mean_rate, r.stderr, r.n);
    }
    let out = shared.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    eval::write_reports(&out, &reports, shared.overwrite).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn baseline(
    cfg: &RunConfig,
    shared: &Shared,
    variant: BaselineVariant,
    dataset: Option<&Path>,
    test_size: Option<usize>,
) -> anyhow::Result<()> {
    let seed = shared.seed.unwrap_or(cfg.eval.test_seed);
    let mut sys = cfg.system;
    let test = match dataset {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let (header, channels) = read_dataset(BufReader::new(file))?;
            sys.n_antennas = header.n_antennas as usize;
            sys.n_users = header.n_users as usize;
            sys.n_paths = header.n_paths as usize;
            TestSet::with_channels(&sys, seed, channels)
        }
        None => TestSet::generate(&sys, seed, test_size.unwrap_or(cfg.eval.test_size)),
    };
    if test.is_empty() {
        bail!("no channels to evaluate");
    }
    let rates = Baseline::new(variant, sys, baseline_pilots(&sys, seed))?.rates(&test.channels, &test.noise)?;
    let out = shared.out.clone().unwrap_or_else(|| "baseline_rates.csv".into());
    let mut w = open_csv(&out, shared.overwrite, &["channel", "method", "B", "sum_rate"])?;
    for (i, r) in rates.iter().enumerate() {
        w.write_record([i.to_string(), variant.to_string(), sys.n_bits.to_string(), r.to_string()])?;
    }
    w.flush()?;
    let report = EvalReport::from_rates(variant.name(), sys, &rates)?;
    println!("{variant}: mean {:.4} +- {:.4} over {} channels", report.mean_rate, report.stderr, report.n);
    Ok(())
}

pub fn count(cfg: &RunConfig, shared: &Shared, convention: FlopConvention) -> anyhow::Result<()> {
    let s = cfg.system;
    let model = EfbModel::new(s, cfg.arch, 0)?;
    let c = complexity(&model, convention);
    println!("K={} N_t={} L={} B={} (FLOP convention: {convention})", s.n_users, s.n_antennas, s.n_pilots, s.n_bits);
    println!("params_total   {}", c.params_total);
    println!("params_per_ue  {}", c.params_per_ue);
    println!("params_decoder {}", c.params_decoder);
    println!("params_pilots  {}", c.params_pilots);
    println!("flops_total    {}", c.flops_total);
    println!("flops_per_ue   {}", c.flops_per_ue);
    if let Some(out) = &shared.out {
        let header = [
            "K", "N_t", "L", "B", "convention", "params_total", "params_per_ue", "params_decoder", "params_pilots",
            "flops_total", "flops_per_ue",
        ];
        let mut w = open_csv(out, shared.overwrite, &header)?;
        w.write_record([
            s.n_users.to_string(),
            s.n_antennas.to_string(),
            s.n_pilots.to_string(),
            s.n_bits.to_string(),
            convention.to_string(),
            c.params_total.to_string(),
            c.params_per_ue.to_string(),
            c.params_decoder.to_string(),
            c.params_pilots.to_string(),
            c.flops_total.to_string(),
            c.flops_per_ue.to_string(),
        ])?;
        w.flush()?;
    }
    Ok(())
}

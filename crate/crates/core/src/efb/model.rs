use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use super::beamformer::{digital_from_raw, normalize_power, sum_rate_loss, Beamformer};
use super::decoder::Decoder;
use super::encoder::Encoder;
use super::pilot::{draw_pilot_noise, receive, receive_on_tape, PilotBank};
use super::quantizer::QuantizerMode;
use super::ArchConfig;
use crate::nn::{Mode, ParamStore, Tape, Tensor, Var};
use crate::rng::{stream_rng, STREAM_INIT};
use crate::sysmodel::{ChannelRealization, SystemConfig};
use crate::{Error, Result};

/// Bits fed back by all users for one channel realization, `K x B`, each
/// entry `+1` or `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackBits {
    pub bits: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub quantizer: QuantizerMode,
}

impl ForwardOptions {
    pub const TRAIN: Self = Self { mode: Mode::Train, quantizer: QuantizerMode::Hard };
    pub const EVAL: Self = Self { mode: Mode::Eval, quantizer: QuantizerMode::Hard };
}

pub struct LossOutput {
    /// Negative mean sum rate, shape `()`.
    pub loss: Var,
    /// Sum rate of every channel in the batch.
    pub rates: Vec<f64>,
}

/// Pilot bank, one encoder per user and the shared decoder, with all their
/// parameters in a single store.
#[derive(Debug, Clone)]
pub struct EfbModel {
    pub config: SystemConfig,
    pub arch: ArchConfig,
    pub store: ParamStore,
    pub pilot: PilotBank,
    pub encoders: Vec<Encoder>,
    pub decoder: Decoder,
}

impl EfbModel {
    pub fn new(config: SystemConfig, arch: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        arch.validate()?;
        let mut rng = stream_rng(seed, STREAM_INIT);
        let mut store = ParamStore::new();
        let pilot = PilotBank::new(&mut store, &mut rng, config.n_antennas, config.n_pilots, config.power);
        let encoders = (0..config.n_users)
            .map(|k| Encoder::new(&mut store, &mut rng, &format!("encoder{k}"), &arch, config.n_pilots, config.n_bits))
            .collect::<Result<Vec<_>>>()?;
        let decoder = Decoder::new(&mut store, &mut rng, &arch, config.n_users, config.n_antennas, config.n_bits)?;
        Ok(Self { config, arch, store, pilot, encoders, decoder })
    }

    pub fn param_count(&self) -> usize {
        self.pilot.param_count()
            + self.encoders.iter().map(Encoder::param_count).sum::<usize>()
            + self.decoder.param_count()
    }

    /// Receiver noise for every channel of a batch, in batch order.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, count: usize, noise_var: f64) -> Vec<DMatrix<Complex64>> {
        (0..count)
            .map(|_| draw_pilot_noise(rng, self.config.n_users, self.config.n_pilots, noise_var))
            .collect()
    }

    fn check_batch(&self, batch: &[ChannelRealization], noise: &[DMatrix<Complex64>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if noise.len() != batch.len() {
            return Err(Error::Shape("one noise draw per channel is required".into()));
        }
        let (k, nt) = (self.config.n_users, self.config.n_antennas);
        if let Some(bad) = batch.iter().find(|c| c.n_users() != k || c.n_antennas() != nt) {
            return Err(Error::Shape(format!(
                "channel is {}x{}, model expects {k}x{nt}",
                bad.n_users(),
                bad.n_antennas()
            )));
        }
        Ok(())
    }

    /// Decoder outputs `(theta_A [N, N_t], D_raw [N, 2K^2])` on the tape.
    pub fn forward_with_noise(
        &self,
        tape: &mut Tape,
        batch: &[ChannelRealization],
        noise: &[DMatrix<Complex64>],
        opts: ForwardOptions,
    ) -> Result<(Var, Var)> {
        self.check_batch(batch, noise)?;
        let theta = tape.param(&self.store, self.pilot.theta());
        let bits = self
            .encoders
            .iter()
            .enumerate()
            .map(|(k, enc)| {
                let y = receive_on_tape(tape, theta, self.config.power, batch, noise, k)?;
                enc.forward(tape, &self.store, y, opts.mode, opts.quantizer)
            })
            .collect::<Result<Vec<_>>>()?;
        let q = tape.stack1(&bits)?;
        self.decoder.forward(tape, &self.store, q, opts.mode)
    }

    /// Negative mean sum rate with the given pilot noise.
    pub fn loss_with_noise(
        &self,
        tape: &mut Tape,
        batch: &[ChannelRealization],
        noise: &[DMatrix<Complex64>],
        noise_var: f64,
        opts: ForwardOptions,
    ) -> Result<LossOutput> {
        let (theta_a, d_raw) = self.forward_with_noise(tape, batch, noise, opts)?;
        let (loss, rates) = sum_rate_loss(tape, theta_a, d_raw, batch, self.config.power, noise_var)?;
        Ok(LossOutput { loss, rates })
    }

    /// Negative mean sum rate with fresh `CN(0, noise_var)` pilot noise.
    pub fn forward_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &[ChannelRealization],
        noise_var: f64,
        rng: &mut R,
        opts: ForwardOptions,
    ) -> Result<LossOutput> {
        let noise = self.draw_noise(rng, batch.len(), noise_var);
        self.loss_with_noise(tape, batch, &noise, noise_var, opts)
    }

    /// Runs encoder `user` in evaluation mode on received pilot sequences
    /// of that user alone. Returns one `B`-vector of `+-1` per sequence.
    pub fn encode_received(&self, user: usize, received: &[DVector<Complex64>]) -> Result<Vec<Vec<f64>>> {
        let enc = self
            .encoders
            .get(user)
            .ok_or_else(|| Error::Shape(format!("no encoder for user {user}")))?;
        let l = self.config.n_pilots;
        let mut data = Vec::with_capacity(received.len() * 2 * l);
        for y in received {
            if y.len() != l {
                return Err(Error::Shape(format!("received sequence of length {}, expected {l}", y.len())));
            }
            data.extend(y.iter().map(|z| z.re));
            data.extend(y.iter().map(|z| z.im));
        }
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::new(vec![received.len(), 2, l], data)?);
        let q = enc.forward(&mut tape, &self.store, y, Mode::Eval, QuantizerMode::Hard)?;
        Ok(tape.value(q).data().chunks(self.config.n_bits).map(<[f64]>::to_vec).collect())
    }

    /// Feedback of every user for each channel, each encoder seeing only
    /// its own row of the received pilots.
    pub fn feedback_bits(&self, batch: &[ChannelRealization], noise: &[DMatrix<Complex64>]) -> Result<Vec<FeedbackBits>> {
        self.check_batch(batch, noise)?;
        let pilots = self.pilot.matrix(&self.store);
        let received: Vec<_> = batch.iter().zip(noise).map(|(ch, z)| receive(&pilots, ch, z)).collect();
        let (k, b) = (self.config.n_users, self.config.n_bits);
        let mut out = vec![FeedbackBits { bits: DMatrix::zeros(k, b) }; batch.len()];
        for user in 0..k {
            let rows: Vec<DVector<Complex64>> = received.iter().map(|y| y.row(user).transpose()).collect();
            for (fb, bits) in out.iter_mut().zip(self.encode_received(user, &rows)?) {
                fb.bits.row_mut(user).copy_from_slice(&bits);
            }
        }
        Ok(out)
    }

    /// Decodes feedback into power-normalised beamformers.
    pub fn decode_bits(&self, feedback: &[FeedbackBits]) -> Result<Vec<Beamformer>> {
        let (k, b, nt) = (self.config.n_users, self.config.n_bits, self.config.n_antennas);
        let mut data = Vec::with_capacity(feedback.len() * k * b);
        for fb in feedback {
            if fb.bits.shape() != (k, b) {
                return Err(Error::Shape(format!("feedback is {:?}, expected ({k}, {b})", fb.bits.shape())));
            }
            for user in 0..k {
                data.extend(fb.bits.row(user).iter());
            }
        }
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::new(vec![feedback.len(), k, b], data)?);
        let (theta, digital) = self.decoder.forward(&mut tape, &self.store, q, Mode::Eval)?;
        let (theta, digital) = (tape.value(theta).data(), tape.value(digital).data());
        theta
            .chunks(nt)
            .zip(digital.chunks(2 * k * k))
            .map(|(t, d)| {
                normalize_power(
                    DVector::from_row_slice(t),
                    digital_from_raw(d, k),
                    self.config.power,
                    self.config.n_per_subarray(),
                )
            })
            .collect()
    }

    /// Full evaluation-mode pipeline for a batch with the given pilot noise.
    pub fn infer(&self, batch: &[ChannelRealization], noise: &[DMatrix<Complex64>]) -> Result<Vec<Beamformer>> {
        self.decode_bits(&self.feedback_bits(batch, noise)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efb::beamformer::sum_rate;
    use crate::sysmodel::sample_batch;
    use crate::testutil::check_param_grads;

    fn tiny() -> SystemConfig {
        SystemConfig { n_antennas: 8, n_users: 2, n_pilots: 4, n_bits: 10, ..Default::default() }
    }

    fn small_arch() -> ArchConfig {
        ArchConfig { ff_dim: 16, decoder_hidden: 32, decoder_budget: 40, ..Default::default() }
    }

    #[test]
    fn eval_bits_are_signs_and_deterministic() {
        let cfg = tiny();
        let model = EfbModel::new(cfg, small_arch(), 3).unwrap();
        let batch = sample_batch(&cfg, &mut stream_rng(3, 9), 6);
        let noise = model.draw_noise(&mut stream_rng(3, 10), 6, cfg.noise_var());
        let a = model.feedback_bits(&batch, &noise).unwrap();
        let b = model.feedback_bits(&batch, &noise).unwrap();
        assert_eq!(a, b);
        for fb in &a {
            assert_eq!(fb.bits.shape(), (2, 10));
            assert!(fb.bits.iter().all(|&x| x == 1.0 || x == -1.0));
        }
    }

    #[test]
    fn bits_of_one_user_ignore_other_users() {
        let cfg = tiny();
        let model = EfbModel::new(cfg, small_arch(), 4).unwrap();
        let batch = sample_batch(&cfg, &mut stream_rng(4, 9), 8);
        let noise = model.draw_noise(&mut stream_rng(4, 10), 8, cfg.noise_var());
        let base = model.feedback_bits(&batch, &noise).unwrap();
        let mut rng = stream_rng(4, 11);
        let mut perturbed = batch.clone();
        for ch in &mut perturbed {
            for n in 0..cfg.n_antennas {
                ch.channels[(1, n)] = crate::sysmodel::complex_gaussian(&mut rng, 5.0);
            }
        }
        let moved = model.feedback_bits(&perturbed, &noise).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert_eq!(a.bits.row(0), b.bits.row(0));
        }
    }

    #[test]
    fn decoded_beamformers_meet_power_budget() {
        let cfg = SystemConfig { power: 2.5, ..tiny() };
        let model = EfbModel::new(cfg, small_arch(), 5).unwrap();
        let batch = sample_batch(&cfg, &mut stream_rng(5, 9), 10);
        let noise = model.draw_noise(&mut stream_rng(5, 10), 10, cfg.noise_var());
        for bf in model.infer(&batch, &noise).unwrap() {
            assert!((bf.power() / 2.5 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_loss_matches_chained_components() {
        let cfg = tiny();
        let model = EfbModel::new(cfg, small_arch(), 6).unwrap();
        let batch = sample_batch(&cfg, &mut stream_rng(6, 9), 7);
        let noise = model.draw_noise(&mut stream_rng(6, 10), 7, cfg.noise_var());
        let mut tape = Tape::new();
        let out = model.loss_with_noise(&mut tape, &batch, &noise, cfg.noise_var(), ForwardOptions::EVAL).unwrap();
        let bfs = model.infer(&batch, &noise).unwrap();
        let manual: f64 = batch
            .iter()
            .zip(&bfs)
            .map(|(ch, bf)| sum_rate(ch, bf, cfg.noise_var()).unwrap())
            .sum::<f64>()
            / 7.0;
        assert!((tape.value(out.loss).item() + manual).abs() < 1e-9);
    }

    #[test]
    fn surrogate_network_gradients_match_finite_differences() {
        let cfg = SystemConfig { n_antennas: 4, n_users: 2, n_pilots: 3, n_bits: 4, ..Default::default() };
        let arch = ArchConfig {
            ff_dim: 6,
            transformer_layers: 1,
            encoder_hidden_per_bit: 2,
            decoder_hidden: 8,
            decoder_budget: 8,
            ..Default::default()
        };
        let model = EfbModel::new(cfg, arch, 7).unwrap();
        let batch = sample_batch(&cfg, &mut stream_rng(7, 9), 4);
        let noise = model.draw_noise(&mut stream_rng(7, 10), 4, cfg.noise_var());
        let opts = ForwardOptions { mode: Mode::Train, quantizer: QuantizerMode::Surrogate };
        let err = check_param_grads(&model.store, 6, |tape, store| {
            let m = EfbModel { store: store.clone(), ..model.clone() };
            m.loss_with_noise(tape, &batch, &noise, cfg.noise_var(), opts).unwrap().loss
        });
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn rejects_mismatched_channels() {
        let cfg = tiny();
        let model = EfbModel::new(cfg, small_arch(), 8).unwrap();
        let other = SystemConfig { n_antennas: 4, ..cfg };
        let batch = sample_batch(&other, &mut stream_rng(8, 9), 2);
        let noise = model.draw_noise(&mut stream_rng(8, 10), 2, 0.1);
        assert!(matches!(model.infer(&batch, &noise), Err(Error::Shape(_))));
    }
}

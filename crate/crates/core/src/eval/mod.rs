//! Sum-rate evaluation on seeded test sets, CSV reporting and complexity
//! accounting.

mod complexity;

pub use complexity::{complexity, count_flops, count_params, ComplexityReport, FlopConvention};

use std::fs::OpenOptions;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::baselines::{baseline_pilots, Baseline, BaselineVariant};
use crate::efb::{draw_pilot_noise, sum_rate, EfbModel};
use crate::rng::{stream_rng, STREAM_EVAL_CHANNELS, STREAM_EVAL_NOISE};
use crate::sysmodel::{sample_batch, ChannelRealization, SystemConfig};
use crate::{Error, Result};

/// Size of the canonical test set.
pub const DEFAULT_TEST_SIZE: usize = 10_000;

/// Channels learned models are pushed through at once.
const EVAL_CHUNK: usize = 500;

/// Channels and the pilot noise each user observes on them. All methods
/// evaluated on one test set see the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub channels: Vec<ChannelRealization>,
    pub noise: Vec<DMatrix<Complex64>>,
}

impl TestSet {
    pub fn generate(cfg: &SystemConfig, seed: u64, size: usize) -> Self {
        let channels = sample_batch(cfg, &mut stream_rng(seed, STREAM_EVAL_CHANNELS), size);
        let mut rng = stream_rng(seed, STREAM_EVAL_NOISE);
        let noise = (0..size)
            .map(|_| draw_pilot_noise(&mut rng, cfg.n_users, cfg.n_pilots, cfg.noise_var()))
            .collect();
        Self { channels, noise }
    }

    /// Test set over given channels, with seeded pilot noise.
    pub fn with_channels(cfg: &SystemConfig, seed: u64, channels: Vec<ChannelRealization>) -> Self {
        let mut rng = stream_rng(seed, STREAM_EVAL_NOISE);
        let noise = channels
            .iter()
            .map(|_| draw_pilot_noise(&mut rng, cfg.n_users, cfg.n_pilots, cfg.noise_var()))
            .collect();
        Self { channels, noise }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Learned(&'a EfbModel),
    Baseline(BaselineVariant),
}

impl Method<'_> {
    pub fn label(&self) -> String {
        match self {
            Self::Learned(_) => "learned".to_string(),
            Self::Baseline(v) => v.name().to_string(),
        }
    }
}

/// Per-channel sum rates of `method` on `test`. Baseline pilots are
/// fixed by `pilot_seed`.
pub fn rates(method: Method<'_>, cfg: &SystemConfig, test: &TestSet, pilot_seed: u64) -> Result<Vec<f64>> {
    match method {
        Method::Learned(model) => {
            if model.config != *cfg {
                return Err(Error::Config("model was built for a different system configuration".into()));
            }
            let mut out = Vec::with_capacity(test.len());
            for (channels, noise) in test.channels.chunks(EVAL_CHUNK).zip(test.noise.chunks(EVAL_CHUNK)) {
                for (ch, bf) in channels.iter().zip(model.infer(channels, noise)?) {
                    out.push(sum_rate(ch, &bf, cfg.noise_var())?);
                }
            }
            Ok(out)
        }
        Method::Baseline(v) => Baseline::new(v, *cfg, baseline_pilots(cfg, pilot_seed))?.rates(&test.channels, &test.noise),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub config: SystemConfig,
    pub mean_rate: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub stderr: f64,
    pub n: usize,
}

impl EvalReport {
    /// The mean is accumulated over sorted rates, so that it does not depend
    /// on the order of the test set.
    pub fn from_rates(method: &str, config: SystemConfig, rates: &[f64]) -> Result<Self> {
        let n = rates.len();
        if n == 0 {
            return Err(Error::Config("cannot report on an empty test set".into()));
        }
        let mut sorted = rates.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = sorted.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { method: method.to_string(), config, mean_rate: mean, stderr, n })
    }
}

/// Evaluates `method` on the canonical test set of `size` channels drawn
/// from `test_seed`; baseline pilots use the same seed.
pub fn evaluate(method: Method<'_>, cfg: &SystemConfig, test_seed: u64, size: usize) -> Result<EvalReport> {
    let test = TestSet::generate(cfg, test_seed, size);
    evaluate_on(method, cfg, &test, test_seed)
}

pub fn evaluate_on(method: Method<'_>, cfg: &SystemConfig, test: &TestSet, pilot_seed: u64) -> Result<EvalReport> {
    EvalReport::from_rates(&method.label(), *cfg, &rates(method, cfg, test, pilot_seed)?)
}

pub const CSV_HEADER: [&str; 9] = ["method", "K", "N_t", "L", "B", "snr_db", "mean_rate", "stderr", "n"];

/// Appends report rows to `path`, writing the header when the file is new
/// or empty. With `overwrite` the file is truncated first.
pub fn write_reports(path: impl AsRef<Path>, reports: &[EvalReport], overwrite: bool) -> Result<()> {
    let path = path.as_ref();
    let fresh = overwrite || std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!overwrite)
        .truncate(overwrite)
        .open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    for r in reports {
        let c = &r.config;
        w.write_record([
            r.method.clone(),
            c.n_users.to_string(),
            c.n_antennas.to_string(),
            c.n_pilots.to_string(),
            c.n_bits.to_string(),
            c.snr_db.to_string(),
            r.mean_rate.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Classical benchmarks: HP-sub zero forcing with full CSI, and with
//! channels estimated by OMP from pilots and fed back either exactly or
//! through a `B`-bit path quantizer.

mod hpsub;
mod omp;
mod quantize;

pub use hpsub::hp_sub_beamform;
pub use omp::{omp_estimate, AngleDictionary, EstimatedPaths, OmpTrace, SensingMatrix};
pub use quantize::{
    bit_split, dequantize_paths, quantize_paths, uniform_code, uniform_midpoint, GAIN_MAGNITUDE_MAX,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::efb::{pilot_matrix, receive, sum_rate};
use crate::rng::{stream_rng, STREAM_BASELINE_PILOTS};
use crate::sysmodel::{ChannelRealization, SystemConfig};
use crate::{Error, Result};

/// Dictionary atoms per antenna.
pub const DICTIONARY_OVERSAMPLING: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineVariant {
    FullCsi,
    OmpInfinite,
    OmpFinite,
}

impl BaselineVariant {
    pub const ALL: [Self; 3] = [Self::FullCsi, Self::OmpInfinite, Self::OmpFinite];

    pub fn name(self) -> &'static str {
        match self {
            Self::FullCsi => "full_csi",
            Self::OmpInfinite => "omp_infinite",
            Self::OmpFinite => "omp_finite",
        }
    }
}

impl fmt::Display for BaselineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}; expected full_csi, omp_infinite or omp_finite")))
    }
}

/// Random constant-modulus pilots used by the OMP baselines, fixed by `seed`.
pub fn baseline_pilots(cfg: &SystemConfig, seed: u64) -> DMatrix<Complex64> {
    let mut rng = stream_rng(seed, STREAM_BASELINE_PILOTS);
    let theta: Vec<f64> = (0..cfg.n_antennas * cfg.n_pilots).map(|_| rng.random_range(-PI..PI)).collect();
    pilot_matrix(&theta, cfg.n_antennas, cfg.n_pilots, cfg.power)
}

/// A baseline pipeline with its pilots and dictionary prepared once.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub variant: BaselineVariant,
    pub config: SystemConfig,
    pub pilots: DMatrix<Complex64>,
    sensing: SensingMatrix,
}

impl Baseline {
    pub fn new(variant: BaselineVariant, config: SystemConfig, pilots: DMatrix<Complex64>) -> Result<Self> {
        config.validate()?;
        if variant == BaselineVariant::OmpFinite {
            bit_split(config.n_bits, config.n_paths)?;
        }
        let dictionary = AngleDictionary::new(
            config.n_antennas,
            DICTIONARY_OVERSAMPLING * config.n_antennas,
            config.spacing_ratio,
        )?;
        let sensing = SensingMatrix::new(&pilots, dictionary)?;
        Ok(Self { variant, config, pilots, sensing })
    }

    /// Channel estimates the base station ends up with, `K x N_t`.
    pub fn estimated_channels(&self, channel: &ChannelRealization, noise: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let cfg = &self.config;
        if self.variant == BaselineVariant::FullCsi {
            return Ok(channel.channels.clone());
        }
        let received = receive(&self.pilots, channel, noise);
        let mut h_hat = DMatrix::zeros(cfg.n_users, cfg.n_antennas);
        for k in 0..cfg.n_users {
            let mut paths = self.sensing.estimate(&received.row(k).transpose(), cfg.n_paths)?;
            if self.variant == BaselineVariant::OmpFinite {
                paths = dequantize_paths(&quantize_paths(&paths, cfg.n_bits)?, cfg.n_paths)?;
            }
            h_hat.set_row(k, &paths.channel(cfg.n_antennas, cfg.spacing_ratio).transpose());
        }
        Ok(h_hat)
    }

    /// Sum rate of one channel given the pilot noise the users observe.
    pub fn rate(&self, channel: &ChannelRealization, noise: &DMatrix<Complex64>) -> Result<f64> {
        let bf = hp_sub_beamform(&self.estimated_channels(channel, noise)?, self.config.power)?;
        sum_rate(channel, &bf, self.config.noise_var())
    }

    pub fn rates(&self, channels: &[ChannelRealization], noise: &[DMatrix<Complex64>]) -> Result<Vec<f64>> {
        if channels.len() != noise.len() {
            return Err(Error::Shape("one noise draw per channel is required".into()));
        }
        channels.iter().zip(noise).map(|(c, z)| self.rate(c, z)).collect()
    }
}

/// Per-channel sum rates of `variant`, with pilots fixed by `pilot_seed`
/// and pilot noise drawn from `rng` channel by channel.
pub fn run_baseline<R: Rng + ?Sized>(
    variant: BaselineVariant,
    cfg: &SystemConfig,
    channels: &[ChannelRealization],
    pilot_seed: u64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let baseline = Baseline::new(variant, *cfg, baseline_pilots(cfg, pilot_seed))?;
    let noise: Vec<_> = channels
        .iter()
        .map(|_| crate::efb::draw_pilot_noise(rng, cfg.n_users, cfg.n_pilots, cfg.noise_var()))
        .collect();
    baseline.rates(channels, &noise)
}

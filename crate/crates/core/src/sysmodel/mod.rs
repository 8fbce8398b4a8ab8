//! System model: constants, the subarray antenna connector, ULA steering
//! vectors and clustered Saleh-Valenzuela channel draws.
//!
//! Channels are stored as a `K x N_t` matrix whose row `k` is `h_k` itself.
//! The conjugate transpose `h_k^H` is taken wherever a channel multiplies a
//! transmit vector.

mod dataset;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{read_dataset, write_dataset, DatasetHeader, DATASET_MAGIC};

/// Scalar constants of one simulated deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Transmit antennas at the base station, `N_t`.
    pub n_antennas: usize,
    /// Single-antenna users, `K`; also the number of RF chains.
    pub n_users: usize,
    /// Downlink pilot length, `L`.
    pub n_pilots: usize,
    /// Feedback bits per user, `B`.
    pub n_bits: usize,
    /// Transmit power `P` in linear units.
    pub power: f64,
    pub snr_db: f64,
    /// Propagation paths per user, `L_path`.
    pub n_paths: usize,
    /// Element spacing over wavelength, `d / lambda`.
    pub spacing_ratio: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_antennas: 64,
            n_users: 2,
            n_pilots: 8,
            n_bits: 10,
            power: 1.0,
            snr_db: 10.0,
            n_paths: 2,
            spacing_ratio: 0.5,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_antennas", self.n_antennas),
            ("n_users", self.n_users),
            ("n_pilots", self.n_pilots),
            ("n_bits", self.n_bits),
            ("n_paths", self.n_paths),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_antennas % self.n_users != 0 {
            return Err(Error::Config(format!(
                "n_antennas ({}) must be a multiple of n_users ({})",
                self.n_antennas, self.n_users
            )));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("power must be positive, got {}", self.power)));
        }
        if !self.snr_db.is_finite() || !self.spacing_ratio.is_finite() {
            return Err(Error::Config("snr_db and spacing_ratio must be finite".into()));
        }
        Ok(())
    }

    /// Antennas behind each RF chain, `N_m = N_t / K`.
    pub fn n_per_subarray(&self) -> usize {
        self.n_antennas / self.n_users
    }

    pub fn noise_var(&self) -> f64 {
        noise_variance(self.power, self.snr_db)
    }
}

/// `sigma^2 = P * 10^(-snr_db / 10)`.
pub fn noise_variance(power: f64, snr_db: f64) -> f64 {
    power * 10f64.powf(-snr_db / 10.0)
}

/// ULA transmit response; entry `m` is `exp(j 2 pi (d/lambda) m sin(phi))`.
pub fn array_response(phi: f64, n: usize, spacing_ratio: f64) -> DVector<Complex64> {
    let step = 2.0 * PI * spacing_ratio * phi.sin();
    DVector::from_iterator(n, (0..n).map(|m| Complex64::from_polar(1.0, step * m as f64)))
}

/// Block-diagonal connector `I_K (x) 1_{N_m}`: antenna `n` feeds RF chain `n / N_m`.
pub fn antenna_connector(n_users: usize, n_per_subarray: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_users * n_per_subarray, n_users, |n, k| {
        if n / n_per_subarray == k {
            1.0
        } else {
            0.0
        }
    })
}

/// One draw of all user channels together with the path parameters that
/// generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `K x N_t`; row `k` holds `h_k`.
    pub channels: DMatrix<Complex64>,
    /// `L_path x K` complex path gains.
    pub gains: DMatrix<Complex64>,
    /// `L_path x K` angles of departure in radians.
    pub aods: DMatrix<f64>,
}

impl ChannelRealization {
    /// Builds the channels from path parameters,
    /// `h_k = (1/L_path) sum_p alpha_{p,k} a_t(phi_{p,k})`.
    pub fn from_paths(
        gains: DMatrix<Complex64>,
        aods: DMatrix<f64>,
        n_antennas: usize,
        spacing_ratio: f64,
    ) -> Self {
        assert_eq!(gains.shape(), aods.shape(), "gain and AoD tables must match");
        let (n_paths, n_users) = gains.shape();
        let mut channels = DMatrix::zeros(n_users, n_antennas);
        let scale = 1.0 / n_paths as f64;
        for k in 0..n_users {
            for p in 0..n_paths {
                let response = array_response(aods[(p, k)], n_antennas, spacing_ratio);
                let coeff = gains[(p, k)] * scale;
                for n in 0..n_antennas {
                    channels[(k, n)] += coeff * response[n];
                }
            }
        }
        Self { channels, gains, aods }
    }

    pub fn n_users(&self) -> usize {
        self.channels.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.channels.ncols()
    }

    /// `h_k` as a column vector.
    pub fn channel(&self, k: usize) -> DVector<Complex64> {
        self.channels.row(k).transpose()
    }

    pub fn reconstruct(&self, spacing_ratio: f64) -> DMatrix<Complex64> {
        Self::from_paths(self.gains.clone(), self.aods.clone(), self.n_antennas(), spacing_ratio)
            .channels
    }
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(sd * re, sd * im)
}

/// Draws one realization: unit-variance complex Gaussian gains and AoDs
/// uniform on `[-pi/2, pi/2]`, independently per path and user.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ChannelRealization {
    let (n_paths, n_users) = (cfg.n_paths, cfg.n_users);
    let mut gains = DMatrix::zeros(n_paths, n_users);
    let mut aods = DMatrix::zeros(n_paths, n_users);
    for k in 0..n_users {
        for p in 0..n_paths {
            gains[(p, k)] = complex_gaussian(rng, 1.0);
            aods[(p, k)] = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
        }
    }
    ChannelRealization::from_paths(gains, aods, cfg.n_antennas, cfg.spacing_ratio)
}

pub fn sample_batch<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    rng: &mut R,
    count: usize,
) -> Vec<ChannelRealization> {
    (0..count).map(|_| sample_channel(cfg, rng)).collect()
}

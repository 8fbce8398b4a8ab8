//! Subarray hybrid beamformers, power normalisation and the sum-rate
//! objective.
//!
//! The equivalent precoder of user `m` is `w_m = A C d_m`, with
//! `A = diag(exp(j theta_A))` and `C` the block connector. Because `A` is
//! unitary and the columns of `C` have disjoint supports,
//! `||A C D||_F^2 = N_m ||D||_F^2`; the tape loss uses that identity while
//! [`normalize_power`] forms the product explicitly.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::nn::{Grads, Op, Tape, Tensor, Var};
use crate::sysmodel::ChannelRealization;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    /// Analog phases, one per antenna.
    pub theta_a: DVector<f64>,
    /// Power-normalised digital precoder, `K x K`, column `m` serves user `m`.
    pub d: DMatrix<Complex64>,
    /// Digital precoder before normalisation.
    pub d_raw: DMatrix<Complex64>,
    pub n_per_subarray: usize,
}

impl Beamformer {
    /// Diagonal of `A`.
    pub fn analog(&self) -> DVector<Complex64> {
        self.theta_a.map(|t| Complex64::from_polar(1.0, t))
    }

    /// Equivalent precoders `W = A C D`, `N_t x K`.
    pub fn precoders(&self) -> DMatrix<Complex64> {
        analog_connector(&self.theta_a, self.d.nrows(), self.n_per_subarray) * &self.d
    }

    /// `||A C D||_F^2`.
    pub fn power(&self) -> f64 {
        self.precoders().norm_squared()
    }
}

/// `A C` as an explicit `N_t x K` matrix.
pub fn analog_connector(theta_a: &DVector<f64>, n_users: usize, n_per_subarray: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(theta_a.len(), n_users, |n, k| {
        if n / n_per_subarray == k {
            Complex64::from_polar(1.0, theta_a[n])
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// `D = sqrt(P) D_raw / ||A C D_raw||_F`.
pub fn normalize_power(
    theta_a: DVector<f64>,
    d_raw: DMatrix<Complex64>,
    power: f64,
    n_per_subarray: usize,
) -> Result<Beamformer> {
    let k = d_raw.nrows();
    if d_raw.ncols() != k || theta_a.len() != k * n_per_subarray {
        return Err(Error::Shape(format!(
            "beamformer with {} phases and a {}x{} digital stage does not fit N_m = {n_per_subarray}",
            theta_a.len(),
            d_raw.nrows(),
            d_raw.ncols()
        )));
    }
    let norm = (analog_connector(&theta_a, k, n_per_subarray) * &d_raw).norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateBeamformer(format!("||A C D_raw||_F = {norm}")));
    }
    let d = d_raw.map(|z| z * (power.sqrt() / norm));
    Ok(Beamformer { theta_a, d, d_raw, n_per_subarray })
}

/// `sum_k log2(1 + |h_k^H w_k|^2 / (sum_{i != k} |h_k^H w_i|^2 + sigma^2))`.
pub fn sum_rate(channel: &ChannelRealization, bf: &Beamformer, noise_var: f64) -> Result<f64> {
    if noise_var <= 0.0 {
        return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
    }
    let w = bf.precoders();
    if w.nrows() != channel.n_antennas() {
        return Err(Error::Shape("beamformer and channel disagree on N_t".into()));
    }
    let gains = channel.channels.conjugate() * w;
    Ok(rate_from_gains(&gains, noise_var))
}

/// Sum rate from the `K x K` matrix of `h_k^H w_m`.
pub fn rate_from_gains(gains: &DMatrix<Complex64>, noise_var: f64) -> f64 {
    (0..gains.nrows())
        .map(|k| {
            let signal = gains[(k, k)].norm_sqr();
            let interference: f64 =
                (0..gains.ncols()).filter(|&m| m != k).map(|m| gains[(k, m)].norm_sqr()).sum();
            (signal / (interference + noise_var)).ln_1p() / LN_2
        })
        .sum()
}

/// Digital precoder from a decoder head row of interleaved `(re, im)`
/// pairs in row-major `(i, m)` order.
pub fn digital_from_raw(row: &[f64], n_users: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n_users, n_users, |i, m| {
        let at = 2 * (i * n_users + m);
        Complex64::new(row[at], row[at + 1])
    })
}

struct SampleCache {
    /// `h_k^H A C`, `K x K`.
    effective: DMatrix<Complex64>,
    d: DMatrix<Complex64>,
    d_raw: DMatrix<Complex64>,
    scale: f64,
    raw_norm_sqr: f64,
    /// `h_k^H w_m`.
    gains: DMatrix<Complex64>,
    total: Vec<f64>,
    interference: Vec<f64>,
}

struct SumRateLossOp {
    theta_a: Var,
    d_raw: Var,
    channels: Vec<DMatrix<Complex64>>,
    n_per_subarray: usize,
    caches: Vec<SampleCache>,
}

impl Op for SumRateLossOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let batch = self.caches.len();
        let k_users = self.caches[0].d.nrows();
        let nt = k_users * self.n_per_subarray;
        let weight = -g[0] / batch as f64;
        let theta = grads.value(self.theta_a).data();
        let mut g_theta = vec![0.0; batch * nt];
        let mut g_raw = vec![0.0; batch * 2 * k_users * k_users];
        for (b, c) in self.caches.iter().enumerate() {
            // dR/dT[k, m] for T = |h_k^H w_m|^2, times 2 s for the complex gradient.
            let g_s = DMatrix::from_fn(k_users, k_users, |k, m| {
                let mut dt = 1.0 / c.total[k];
                if m != k {
                    dt -= 1.0 / c.interference[k];
                }
                c.gains[(k, m)] * (2.0 * weight * dt / LN_2)
            });
            let g_d = c.effective.adjoint() * &g_s;
            let g_eff = &g_s * c.d.adjoint();
            let inner: f64 = g_d.iter().zip(c.d_raw.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            let proj = inner / c.raw_norm_sqr;
            for i in 0..k_users {
                for m in 0..k_users {
                    let v = (g_d[(i, m)] - c.d_raw[(i, m)] * proj) * c.scale;
                    let at = b * 2 * k_users * k_users + 2 * (i * k_users + m);
                    g_raw[at] = v.re;
                    g_raw[at + 1] = v.im;
                }
            }
            let h = &self.channels[b];
            for n in 0..nt {
                let i = n / self.n_per_subarray;
                let phase = Complex64::from_polar(1.0, theta[b * nt + n]);
                let mut acc = 0.0;
                for k in 0..k_users {
                    let u = h[(k, n)].conj() * phase;
                    let ge = g_eff[(k, i)];
                    acc += -ge.re * u.im + ge.im * u.re;
                }
                g_theta[b * nt + n] = acc;
            }
        }
        if grads.wants(self.theta_a) {
            grads.slot(self.theta_a).iter_mut().zip(&g_theta).for_each(|(d, s)| *d += s);
        }
        if grads.wants(self.d_raw) {
            grads.slot(self.d_raw).iter_mut().zip(&g_raw).for_each(|(d, s)| *d += s);
        }
    }
}

/// Negative mean sum rate of a batch as a shape-`()` tape node.
/// `theta_a` is `[N, N_t]` and `d_raw` is `[N, 2K^2]` in the layout of
/// [`digital_from_raw`]. Also returns the per-channel sum rates.
pub fn sum_rate_loss(
    tape: &mut Tape,
    theta_a: Var,
    d_raw: Var,
    batch: &[ChannelRealization],
    power: f64,
    noise_var: f64,
) -> Result<(Var, Vec<f64>)> {
    if noise_var <= 0.0 {
        return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
    }
    let n = batch.len();
    let first = batch.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (k_users, nt) = (first.n_users(), first.n_antennas());
    let n_per_subarray = nt / k_users;
    if tape.shape(theta_a) != [n, nt] || tape.shape(d_raw) != [n, 2 * k_users * k_users] {
        return Err(Error::Shape(format!(
            "sum-rate loss expects theta [{n}, {nt}] and D [{n}, {}], got {:?} and {:?}",
            2 * k_users * k_users,
            tape.shape(theta_a),
            tape.shape(d_raw)
        )));
    }
    let theta = tape.value(theta_a).data();
    let raw = tape.value(d_raw).data();
    let mut caches = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for (b, real) in batch.iter().enumerate() {
        let h = &real.channels;
        let mut effective = DMatrix::zeros(k_users, k_users);
        for k in 0..k_users {
            for nn in 0..nt {
                let phase = Complex64::from_polar(1.0, theta[b * nt + nn]);
                effective[(k, nn / n_per_subarray)] += h[(k, nn)].conj() * phase;
            }
        }
        let d_raw_m = digital_from_raw(&raw[b * 2 * k_users * k_users..][..2 * k_users * k_users], k_users);
        let raw_norm_sqr = d_raw_m.norm_squared();
        if !(raw_norm_sqr > 0.0 && raw_norm_sqr.is_finite()) {
            return Err(Error::DegenerateBeamformer(format!("sample {b}: ||D_raw||_F^2 = {raw_norm_sqr}")));
        }
        let scale = (power / (n_per_subarray as f64 * raw_norm_sqr)).sqrt();
        let d = d_raw_m.map(|z| z * scale);
        let gains = &effective * &d;
        let mut total = vec![noise_var; k_users];
        for k in 0..k_users {
            total[k] += (0..k_users).map(|m| gains[(k, m)].norm_sqr()).sum::<f64>();
        }
        let interference: Vec<f64> = (0..k_users).map(|k| total[k] - gains[(k, k)].norm_sqr()).collect();
        rates.push(rate_from_gains(&gains, noise_var));
        caches.push(SampleCache {
            effective,
            d,
            d_raw: d_raw_m,
            scale,
            raw_norm_sqr,
            gains,
            total,
            interference,
        });
    }
    let loss = -rates.iter().sum::<f64>() / n as f64;
    let channels = batch.iter().map(|r| r.channels.clone()).collect();
    let op = SumRateLossOp { theta_a, d_raw, channels, n_per_subarray, caches };
    Ok((tape.push(Tensor::scalar(loss), &[theta_a, d_raw], op), rates))
}

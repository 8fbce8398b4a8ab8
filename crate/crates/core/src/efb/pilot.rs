//! Learned downlink pilots and their reception at the users.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::nn::{gemm, Grads, Op, ParamId, ParamStore, Tape, Tensor, Var};
use crate::sysmodel::{complex_gaussian, ChannelRealization};
use crate::{Error, Result};

/// `N_t x L` learnable pilot phases. The transmitted pilots are
/// `sqrt(P / N_t) exp(j theta)`.
#[derive(Debug, Clone)]
pub struct PilotBank {
    theta: ParamId,
    pub n_antennas: usize,
    pub n_pilots: usize,
    pub power: f64,
}

impl PilotBank {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        n_antennas: usize,
        n_pilots: usize,
        power: f64,
    ) -> Self {
        let value = Tensor::from_fn(&[n_antennas, n_pilots], |_| rng.random_range(-PI..PI));
        let theta = store.add("pilot.theta", value);
        Self { theta, n_antennas, n_pilots, power }
    }

    pub fn theta(&self) -> ParamId {
        self.theta
    }

    pub fn amplitude(&self) -> f64 {
        (self.power / self.n_antennas as f64).sqrt()
    }

    /// Realized pilot matrix `X`, `N_t x L`.
    pub fn matrix(&self, store: &ParamStore) -> DMatrix<Complex64> {
        pilot_matrix(store.value(self.theta).data(), self.n_antennas, self.n_pilots, self.power)
    }

    pub fn param_count(&self) -> usize {
        self.n_antennas * self.n_pilots
    }
}

/// Constant-modulus pilots from row-major `N_t x L` phases.
pub fn pilot_matrix(theta: &[f64], n_antennas: usize, n_pilots: usize, power: f64) -> DMatrix<Complex64> {
    let amp = (power / n_antennas as f64).sqrt();
    DMatrix::from_fn(n_antennas, n_pilots, |n, l| Complex64::from_polar(amp, theta[n * n_pilots + l]))
}

/// `K x L` receiver noise, `CN(0, sigma^2)` per entry, drawn row by row.
pub fn draw_pilot_noise<R: Rng + ?Sized>(
    rng: &mut R,
    n_users: usize,
    n_pilots: usize,
    noise_var: f64,
) -> DMatrix<Complex64> {
    let mut z = DMatrix::zeros(n_users, n_pilots);
    for k in 0..n_users {
        for l in 0..n_pilots {
            z[(k, l)] = complex_gaussian(rng, noise_var);
        }
    }
    z
}

/// Noiseless reception plus the given noise: row `k` is `h_k^H X + z_k`.
pub fn receive(pilots: &DMatrix<Complex64>, channel: &ChannelRealization, noise: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    channel.channels.conjugate() * pilots + noise
}

/// Pilot transmission with fresh `CN(0, sigma^2)` noise; `sigma^2 = 0` is
/// the exact noiseless product.
pub fn pilot_transmit<R: Rng + ?Sized>(
    pilots: &DMatrix<Complex64>,
    channel: &ChannelRealization,
    noise_var: f64,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let noise = draw_pilot_noise(rng, channel.n_users(), pilots.ncols(), noise_var);
    receive(pilots, channel, &noise)
}

/// Differentiable reception of one user's pilots over a batch. Channels
/// and noise are constants; only the pilot phases carry gradient.
struct PilotReceiveOp {
    theta: Var,
    h_re: Vec<f64>,
    h_im: Vec<f64>,
    batch: usize,
    n_antennas: usize,
    n_pilots: usize,
    amp: f64,
}

impl Op for PilotReceiveOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let (n, nt, l) = (self.batch, self.n_antennas, self.n_pilots);
        let theta = grads.value(self.theta).data();
        // g is [N, 2, L]; the imaginary rows start L entries in.
        let (g_re, g_im) = (g, &g[l..]);
        let rows = (2 * l, 1);
        let transposed = (1, nt);
        // With C = cos(theta), S = sin(theta): re = A C + B S, im = A S - B C,
        // so dC = A^T g_re - B^T g_im and dS = B^T g_re + A^T g_im.
        let mut d_cos = vec![0.0; nt * l];
        let mut d_sin = vec![0.0; nt * l];
        let mut tmp = vec![0.0; nt * l];
        gemm(nt, n, l, &self.h_re, transposed, g_re, rows, 0.0, &mut d_cos, (l, 1));
        gemm(nt, n, l, &self.h_im, transposed, g_im, rows, 0.0, &mut tmp, (l, 1));
        d_cos.iter_mut().zip(&tmp).for_each(|(a, b)| *a -= b);
        gemm(nt, n, l, &self.h_im, transposed, g_re, rows, 0.0, &mut d_sin, (l, 1));
        gemm(nt, n, l, &self.h_re, transposed, g_im, rows, 0.0, &mut tmp, (l, 1));
        d_sin.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        let s = grads.slot(self.theta);
        for i in 0..nt * l {
            s[i] += self.amp * (theta[i].cos() * d_sin[i] - theta[i].sin() * d_cos[i]);
        }
    }
}

/// Places user `user`'s received pilots for the whole batch on the tape as
/// `[N, 2, L]` (real and imaginary channels), differentiable in `theta`.
pub fn receive_on_tape(
    tape: &mut Tape,
    theta: Var,
    power: f64,
    batch: &[ChannelRealization],
    noise: &[DMatrix<Complex64>],
    user: usize,
) -> Result<Var> {
    let &[nt, l] = tape.shape(theta) else {
        return Err(Error::Shape("pilot phases must be [N_t, L]".into()));
    };
    if noise.len() != batch.len() {
        return Err(Error::Shape("one noise draw per channel is required".into()));
    }
    let n = batch.len();
    let mut h_re = vec![0.0; n * nt];
    let mut h_im = vec![0.0; n * nt];
    for (b, real) in batch.iter().enumerate() {
        if real.n_antennas() != nt || user >= real.n_users() {
            return Err(Error::Shape("channel does not match the pilot bank".into()));
        }
        for i in 0..nt {
            let h = real.channels[(user, i)];
            h_re[b * nt + i] = h.re;
            h_im[b * nt + i] = h.im;
        }
    }
    let amp = (power / nt as f64).sqrt();
    let theta_v = tape.value(theta).data();
    let cos: Vec<f64> = theta_v.iter().map(|t| amp * t.cos()).collect();
    let sin: Vec<f64> = theta_v.iter().map(|t| amp * t.sin()).collect();
    let mut re = vec![0.0; n * l];
    let mut im = vec![0.0; n * l];
    for (b, z) in noise.iter().enumerate() {
        for j in 0..l {
            re[b * l + j] = z[(user, j)].re;
            im[b * l + j] = z[(user, j)].im;
        }
    }
    let neg_cos: Vec<f64> = cos.iter().map(|c| -c).collect();
    let (rows, cols) = ((nt, 1), (l, 1));
    gemm(n, nt, l, &h_re, rows, &cos, cols, 1.0, &mut re, cols);
    gemm(n, nt, l, &h_im, rows, &sin, cols, 1.0, &mut re, cols);
    gemm(n, nt, l, &h_re, rows, &sin, cols, 1.0, &mut im, cols);
    gemm(n, nt, l, &h_im, rows, &neg_cos, cols, 1.0, &mut im, cols);
    let mut data = Vec::with_capacity(2 * n * l);
    for b in 0..n {
        data.extend_from_slice(&re[b * l..][..l]);
        data.extend_from_slice(&im[b * l..][..l]);
    }
    let out = Tensor::new(vec![n, 2, l], data)?;
    let op = PilotReceiveOp { theta, h_re, h_im, batch: n, n_antennas: nt, n_pilots: l, amp };
    Ok(tape.push(out, &[theta], op))
}

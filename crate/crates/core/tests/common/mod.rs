//! Oracles shared by the integration tests: central finite differences
//! over the public tape API and a direct evaluation of the sum rate.

#![allow(dead_code)]

use efb_core::nn::{ParamStore, Tape, Tensor, Var};
use efb_core::rng::stream_rng;
use efb_core::Complex64;
use nalgebra::DMatrix;
use rand::Rng;

pub const STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 7);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(y * r)` for a fixed random `r`.
pub fn probe(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let r = tape.constant(random_tensor(tape.shape(y), seed ^ 0xabc));
    let prod = tape.mul(y, r).unwrap();
    tape.sum(prod)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Relative error between the tape gradient of `f` at `x0` and central
/// differences.
pub fn input_grad_error(x0: &Tensor, f: impl Fn(&mut Tape, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let loss = f(&mut tape, x);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x0.numel()]);
    let value = |t: Tensor| {
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let l = f(&mut tape, x);
        tape.value(l).item()
    };
    let numeric: Vec<f64> = (0..x0.numel())
        .map(|i| {
            let (mut up, mut down) = (x0.clone(), x0.clone());
            up.data_mut()[i] += STEP;
            down.data_mut()[i] -= STEP;
            (value(up) - value(down)) / (2.0 * STEP)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

/// Same check over the trainable parameters of `store`, probing at most
/// `per_param` coordinates of each.
pub fn param_grad_error(store: &ParamStore, per_param: usize, f: impl Fn(&mut Tape, &ParamStore) -> Var) -> f64 {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss).unwrap();
    let mut grads = store.clone();
    grads.zero_grads();
    grads.accumulate_grads(&tape);
    let value = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = f(&mut t, s);
        t.value(l).item()
    };
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.numel();
        for i in (0..n).step_by(n.div_ceil(per_param).max(1)) {
            let mut s = store.clone();
            s.get_mut(id).value.data_mut()[i] += STEP;
            let up = value(&s);
            s.get_mut(id).value.data_mut()[i] -= 2.0 * STEP;
            let down = value(&s);
            numeric.push((up - down) / (2.0 * STEP));
            analytic.push(grads.get(id).grad[i]);
        }
    }
    rel_err(&analytic, &numeric)
}

/// Sum rate of `K x N_t` channels (row `k` is `h_k`) under explicit
/// precoders `w` (`N_t x K`, column `m` serves user `m`), term by term.
pub fn direct_sum_rate(h: &DMatrix<Complex64>, w: &DMatrix<Complex64>, noise_var: f64) -> f64 {
    let (k, nt) = h.shape();
    let inner = |user: usize, m: usize| -> Complex64 { (0..nt).map(|n| h[(user, n)].conj() * w[(n, m)]).sum() };
    (0..k)
        .map(|user| {
            let signal = inner(user, user).norm_sqr();
            let interference: f64 = (0..k).filter(|&m| m != user).map(|m| inner(user, m).norm_sqr()).sum();
            (1.0 + signal / (interference + noise_var)).log2()
        })
        .sum()
}

/// `w_m[n] = exp(j theta_n) D[n / N_m, m]`, built entry by entry.
pub fn explicit_precoders(theta: &[f64], d: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let k = d.nrows();
    let nm = theta.len() / k;
    DMatrix::from_fn(theta.len(), k, |n, m| Complex64::from_polar(1.0, theta[n]) * d[(n / nm, m)])
}

//! Central finite-difference gradient oracle for unit tests.

use rand::Rng;

use crate::nn::{ParamStore, Tape, Tensor, Var};
use crate::rng::stream_rng;

pub const STEP: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 99);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(y * r)` for a fixed random `r`, so that every output entry carries
/// a distinct weight.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let weights = random_tensor(tape.shape(y), seed ^ 0x5eed);
    let w = tape.constant(weights);
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod)
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Gradient of `f` with respect to the input tensor: analytic vs central
/// differences. Returns the relative error.
pub fn check_input_grad(x0: &Tensor, f: impl Fn(&mut Tape, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let loss = f(&mut tape, x);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x0.numel()]);
    let eval = |t: Tensor| {
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let loss = f(&mut tape, x);
        tape.value(loss).item()
    };
    let numeric: Vec<f64> = (0..x0.numel())
        .map(|i| {
            let mut plus = x0.clone();
            plus.data_mut()[i] += STEP;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= STEP;
            (eval(plus) - eval(minus)) / (2.0 * STEP)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

/// Same as [`check_input_grad`] for every trainable parameter in `store`,
/// probing at most `max_per_param` coordinates of each.
pub fn check_param_grads(
    store: &ParamStore,
    max_per_param: usize,
    f: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss).unwrap();
    let mut with_grads = store.clone();
    with_grads.zero_grads();
    with_grads.accumulate_grads(&tape);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.numel();
        let stride = n.div_ceil(max_per_param).max(1);
        for i in (0..n).step_by(stride) {
            let mut probe = store.clone();
            probe.get_mut(id).value.data_mut()[i] += STEP;
            let up = {
                let mut t = Tape::new();
                let l = f(&mut t, &probe);
                t.value(l).item()
            };
            probe.get_mut(id).value.data_mut()[i] -= 2.0 * STEP;
            let down = {
                let mut t = Tape::new();
                let l = f(&mut t, &probe);
                t.value(l).item()
            };
            numeric.push((up - down) / (2.0 * STEP));
            analytic.push(with_grads.get(id).grad[i]);
        }
    }
    rel_err(&analytic, &numeric)
}

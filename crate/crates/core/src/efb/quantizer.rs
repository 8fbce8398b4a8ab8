//! Feedback binarisation.
//!
//! The forward map is `sign(sigmoid(x) - 0.5)` with ties sent to `+1`. In
//! training the gradient is taken from the smooth surrogate
//! `2 sigmoid(x) - 1`, whose slope is `2 s (1 - s)` with `s = sigmoid(x)`.

use crate::nn::{sigmoid, Grads, Op, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerMode {
    /// Hard `+-1` forward, sigmoid-adjusted straight-through backward.
    Hard,
    /// Smooth `2 sigmoid(x) - 1` in both directions. Used for gradient checks.
    Surrogate,
}

pub fn hard_sign(x: f64) -> f64 {
    if sigmoid(x) - 0.5 >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Slope of the surrogate, `2 s (1 - s)`.
pub fn surrogate_slope(x: f64) -> f64 {
    let s = sigmoid(x);
    2.0 * s * (1.0 - s)
}

struct SurrogateGrad(Var);

impl Op for SurrogateGrad {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let x = grads.value(self.0).data();
        let slopes: Vec<f64> = x.iter().map(|&v| surrogate_slope(v)).collect();
        let s = grads.slot(self.0);
        for ((d, &g), slope) in s.iter_mut().zip(g).zip(slopes) {
            *d += g * slope;
        }
    }
}

pub fn quantize(tape: &mut Tape, x: Var, mode: QuantizerMode) -> Var {
    let f: fn(f64) -> f64 = match mode {
        QuantizerMode::Hard => hard_sign,
        QuantizerMode::Surrogate => |v| 2.0 * sigmoid(v) - 1.0,
    };
    let data = tape.value(x).data().iter().map(|&v| f(v)).collect();
    let out = Tensor::new(tape.shape(x).to_vec(), data).expect("same shape");
    tape.push(out, &[x], SurrogateGrad(x))
}

//! Layers built on the tape ops. Each layer registers its parameters in a
//! [`ParamStore`] at construction and reads them back on every forward pass.

use std::ops::{Add, AddAssign};

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{StatUpdate, Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Arithmetic cost of one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    /// Multiply-accumulates in matrix products, convolutions and attention.
    pub macs: u64,
    /// Bias additions that follow a product.
    pub bias_adds: u64,
    /// Normalisation, activation, softmax, residual and scaling work, one
    /// per element touched.
    pub elementwise: u64,
}

impl Add for OpCount {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            macs: self.macs + rhs.macs,
            bias_adds: self.bias_adds + rhs.bias_adds,
            elementwise: self.elementwise + rhs.elementwise,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl OpCount {
    pub fn elementwise(n: usize) -> Self {
        Self { elementwise: n as u64, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    weight: ParamId,
    bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_uniform(&format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng);
        let bias = bias.then(|| store.add_uniform(&format!("{name}.bias"), &[out_dim], in_dim, rng));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    /// Cost of applying the layer to `rows` input vectors.
    pub fn cost(&self, rows: usize) -> OpCount {
        OpCount {
            macs: (rows * self.in_dim * self.out_dim) as u64,
            bias_adds: if self.bias.is_some() { (rows * self.out_dim) as u64 } else { 0 },
            elementwise: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: ParamId,
    bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub width: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        width: usize,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel width must be odd, got {width}")));
        }
        let fan_in = c_in * width;
        let weight = store.add_uniform(&format!("{name}.weight"), &[c_out, c_in, width], fan_in, rng);
        let bias = store.add_uniform(&format!("{name}.bias"), &[c_out], fan_in, rng);
        Ok(Self { weight, bias, c_in, c_out, width })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.width + self.c_out
    }

    pub fn cost(&self, len: usize) -> OpCount {
        OpCount {
            macs: (self.c_out * self.c_in * self.width * len) as u64,
            bias_adds: (self.c_out * len) as u64,
            elementwise: 0,
        }
    }
}

/// Batch normalisation over the features of `[N, F]` inputs.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub features: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[features], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[features])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[features])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[features], 1.0)),
            features,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_stats(&self) -> (ParamId, ParamId) {
        (self.running_mean, self.running_var)
    }

    /// In training mode the running statistics update is recorded on the
    /// tape and applied by [`ParamStore::apply_stat_updates`].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) = tape.batch_norm_train(x, gamma, beta, self.eps)?;
                tape.record_stat_update(StatUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    batch_mean,
                    batch_var,
                    momentum: self.momentum,
                });
                Ok(y)
            }
            Mode::Eval => tape.batch_norm_eval(
                x,
                gamma,
                beta,
                store.value(self.running_mean).data(),
                store.value(self.running_var).data(),
                self.eps,
            ),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.features
    }

    pub fn cost(&self, rows: usize) -> OpCount {
        OpCount::elementwise(rows * self.features)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
    pub features: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[features], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[features])),
            features,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.layer_norm(x, gamma, beta, self.eps)
    }

    pub fn param_count(&self) -> usize {
        2 * self.features
    }

    pub fn cost(&self, rows: usize) -> OpCount {
        OpCount::elementwise(rows * self.features)
    }
}

/// Dimensions of a transformer encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerDims {
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

/// Post-norm transformer encoder layer without positional encoding:
///
/// ```text
/// x1 = LN(x + W_o MHA(W_q x, W_k x, W_v x))
/// y  = LN(x1 + W_2 relu(W_1 x1))
/// ```
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub dims: TransformerDims,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub norm1: LayerNorm,
    pub ff1: Dense,
    pub ff2: Dense,
    pub norm2: LayerNorm,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: TransformerDims,
    ) -> Result<Self> {
        let TransformerDims { model_dim: d, heads, ff_dim } = dims;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("model dim {d} is not divisible by {heads} heads")));
        }
        Ok(Self {
            dims,
            query: Dense::new(store, rng, &format!("{name}.attn.query"), d, d, true),
            key: Dense::new(store, rng, &format!("{name}.attn.key"), d, d, true),
            value: Dense::new(store, rng, &format!("{name}.attn.value"), d, d, true),
            output: Dense::new(store, rng, &format!("{name}.attn.output"), d, d, true),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            ff1: Dense::new(store, rng, &format!("{name}.ff1"), d, ff_dim, true),
            ff2: Dense::new(store, rng, &format!("{name}.ff2"), ff_dim, d, true),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
        })
    }

    /// `x` is `[N, T, d]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let attended = tape.attention(q, k, v, self.dims.heads)?;
        let projected = self.output.forward(tape, store, attended)?;
        let residual = tape.add(x, projected)?;
        let x1 = self.norm1.forward(tape, store, residual)?;
        let hidden = self.ff1.forward(tape, store, x1)?;
        let hidden = tape.relu(hidden);
        let ff = self.ff2.forward(tape, store, hidden)?;
        let residual = tape.add(x1, ff)?;
        self.norm2.forward(tape, store, residual)
    }

    pub fn param_count(&self) -> usize {
        [&self.query, &self.key, &self.value, &self.output, &self.ff1, &self.ff2]
            .iter()
            .map(|d| d.param_count())
            .sum::<usize>()
            + self.norm1.param_count()
            + self.norm2.param_count()
    }

    /// Cost for one sequence of `tokens` positions.
    pub fn cost(&self, tokens: usize) -> OpCount {
        let TransformerDims { model_dim: d, heads, ff_dim } = self.dims;
        let mut c = OpCount::default();
        for proj in [&self.query, &self.key, &self.value, &self.output] {
            c += proj.cost(tokens);
        }
        // Scores and the weighted value sum, over all heads.
        c.macs += 2 * (tokens * tokens * d) as u64;
        c += OpCount::elementwise(heads * tokens * tokens);
        c += OpCount::elementwise(2 * tokens * d);
        c += self.norm1.cost(tokens) + self.norm2.cost(tokens);
        c += self.ff1.cost(tokens) + self.ff2.cost(tokens);
        c += OpCount::elementwise(tokens * ff_dim);
        c
    }
}

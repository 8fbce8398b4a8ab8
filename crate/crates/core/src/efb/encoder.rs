use rand::Rng;

use super::quantizer::{quantize, QuantizerMode};
use super::ArchConfig;
use crate::nn::{BatchNorm1d, Conv1d, Dense, Mode, OpCount, ParamStore, Tape, TransformerLayer, Var};
use crate::{Error, Result};

/// User-side network: received pilots `[N, 2, L]` to `B` bits.
///
/// `conv(2 -> c) -> transformer x n -> flatten -> FC + BN + ReLU -> FC -> sign`
#[derive(Debug, Clone)]
pub struct Encoder {
    pub conv: Conv1d,
    pub layers: Vec<TransformerLayer>,
    pub fc1: Dense,
    pub bn: BatchNorm1d,
    pub fc2: Dense,
    pub n_pilots: usize,
    pub n_bits: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        arch: &ArchConfig,
        n_pilots: usize,
        n_bits: usize,
    ) -> Result<Self> {
        let c = arch.encoder_channels;
        let conv = Conv1d::new(store, rng, &format!("{name}.conv"), 2, c, arch.conv_width)?;
        let layers = (0..arch.transformer_layers)
            .map(|i| TransformerLayer::new(store, rng, &format!("{name}.attn{i}"), arch.transformer_dims()))
            .collect::<Result<Vec<_>>>()?;
        let hidden = arch.encoder_hidden(n_bits);
        let fc1 = Dense::new(store, rng, &format!("{name}.fc1"), c * n_pilots, hidden, true);
        let bn = BatchNorm1d::new(store, &format!("{name}.bn"), hidden);
        let fc2 = Dense::new(store, rng, &format!("{name}.fc2"), hidden, n_bits, true);
        Ok(Self { conv, layers, fc1, bn, fc2, n_pilots, n_bits })
    }

    /// Pre-quantisation logits, `[N, B]`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, received: Var, mode: Mode) -> Result<Var> {
        let n = match *tape.shape(received) {
            [n, 2, l] if l == self.n_pilots => n,
            ref s => return Err(Error::Shape(format!("encoder expects [N, 2, {}], got {s:?}", self.n_pilots))),
        };
        let x = self.conv.forward(tape, store, received)?;
        let mut x = tape.transpose12(x)?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        let x = tape.reshape(x, &[n, self.conv.c_out * self.n_pilots])?;
        let x = self.fc1.forward(tape, store, x)?;
        let x = self.bn.forward(tape, store, x, mode)?;
        let x = tape.relu(x);
        self.fc2.forward(tape, store, x)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        received: Var,
        mode: Mode,
        quantizer: QuantizerMode,
    ) -> Result<Var> {
        let logits = self.logits(tape, store, received, mode)?;
        Ok(quantize(tape, logits, quantizer))
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
            + self.layers.iter().map(TransformerLayer::param_count).sum::<usize>()
            + self.fc1.param_count()
            + self.bn.param_count()
            + self.fc2.param_count()
    }

    /// Cost of encoding one received pilot sequence.
    pub fn cost(&self) -> OpCount {
        let l = self.n_pilots;
        let mut c = self.conv.cost(l);
        for layer in &self.layers {
            c += layer.cost(l);
        }
        c += self.fc1.cost(1) + self.bn.cost(1) + OpCount::elementwise(self.fc1.out_dim);
        c += self.fc2.cost(1) + OpCount::elementwise(self.n_bits);
        c
    }
}

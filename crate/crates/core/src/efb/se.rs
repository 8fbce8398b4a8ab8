use rand::Rng;

use crate::nn::{Dense, OpCount, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Squeeze-and-excitation over the channels of `[N, C, L]` features:
/// average-pool each channel, pass the descriptor through
/// `C -> C/r -> C` with ReLU then sigmoid, and rescale the channels.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub squeeze: Dense,
    pub excite: Dense,
    pub channels: usize,
    pub reduction: usize,
}

impl SeBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "SE block: {channels} channels are not divisible by reduction {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: Dense::new(store, rng, &format!("{name}.squeeze"), channels, hidden, true),
            excite: Dense::new(store, rng, &format!("{name}.excite"), hidden, channels, true),
            channels,
            reduction,
        })
    }

    /// Largest reduction ratio not above `max_reduction` that divides `channels`.
    pub fn fitting_reduction(channels: usize, max_reduction: usize) -> usize {
        (1..=max_reduction.max(1)).rev().find(|r| channels % r == 0).unwrap_or(1)
    }

    /// Channel multipliers in `(0, 1)`, `[N, C]`.
    pub fn multipliers(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let pooled = tape.mean_last(x)?;
        let hidden = self.squeeze.forward(tape, store, pooled)?;
        let hidden = tape.relu(hidden);
        let logits = self.excite.forward(tape, store, hidden)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let scale = self.multipliers(tape, store, x)?;
        tape.scale_channels(x, scale)
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.excite.param_count()
    }

    pub fn cost(&self, len: usize) -> OpCount {
        let c = self.channels;
        OpCount::elementwise(c * len)
            + self.squeeze.cost(1)
            + OpCount::elementwise(c / self.reduction)
            + self.excite.cost(1)
            + OpCount::elementwise(c)
            + OpCount::elementwise(c * len)
    }
}

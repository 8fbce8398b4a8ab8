use rand::Rng;

use super::se::SeBlock;
use super::ArchConfig;
use crate::nn::{BatchNorm1d, Conv1d, Dense, Mode, OpCount, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Base-station network: the `K x B` bits of all users to the analog
/// phases `[N, N_t]` and the raw digital precoder `[N, 2K^2]`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub conv: Conv1d,
    pub se: SeBlock,
    pub fc1: Dense,
    pub bn1: BatchNorm1d,
    pub fc2: Dense,
    pub bn2: BatchNorm1d,
    pub theta_head: Dense,
    pub digital_head: Dense,
    pub n_users: usize,
    pub n_bits: usize,
    pub expansion: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        arch: &ArchConfig,
        n_users: usize,
        n_antennas: usize,
        n_bits: usize,
    ) -> Result<Self> {
        let expansion = arch.expansion(n_bits)?;
        let channels = n_users * expansion;
        let conv = Conv1d::new(store, rng, "decoder.conv", n_users, channels, arch.conv_width)?;
        let reduction = SeBlock::fitting_reduction(channels, arch.se_reduction);
        let se = SeBlock::new(store, rng, "decoder.se", channels, reduction)?;
        let h = arch.decoder_hidden;
        let fc1 = Dense::new(store, rng, "decoder.fc1", channels * n_bits, h, true);
        let bn1 = BatchNorm1d::new(store, "decoder.bn1", h);
        let fc2 = Dense::new(store, rng, "decoder.fc2", h, h, true);
        let bn2 = BatchNorm1d::new(store, "decoder.bn2", h);
        let theta_head = Dense::new(store, rng, "decoder.theta", h, n_antennas, true);
        let digital_head = Dense::new(store, rng, "decoder.digital", h, 2 * n_users * n_users, true);
        Ok(Self { conv, se, fc1, bn1, fc2, bn2, theta_head, digital_head, n_users, n_bits, expansion })
    }

    /// `bits` is `[N, K, B]`; returns `(theta_A, D_raw)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, bits: Var, mode: Mode) -> Result<(Var, Var)> {
        let n = match *tape.shape(bits) {
            [n, k, b] if k == self.n_users && b == self.n_bits => n,
            ref s => {
                return Err(Error::Shape(format!(
                    "decoder expects [N, {}, {}], got {s:?}",
                    self.n_users, self.n_bits
                )))
            }
        };
        let x = self.conv.forward(tape, store, bits)?;
        let x = self.se.forward(tape, store, x)?;
        let x = tape.reshape(x, &[n, self.conv.c_out * self.n_bits])?;
        let x = self.fc1.forward(tape, store, x)?;
        let x = self.bn1.forward(tape, store, x, mode)?;
        let x = tape.relu(x);
        let x = self.fc2.forward(tape, store, x)?;
        let x = self.bn2.forward(tape, store, x, mode)?;
        let x = tape.relu(x);
        let theta = self.theta_head.forward(tape, store, x)?;
        let digital = self.digital_head.forward(tape, store, x)?;
        Ok((theta, digital))
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
            + self.se.param_count()
            + self.fc1.param_count()
            + self.bn1.param_count()
            + self.fc2.param_count()
            + self.bn2.param_count()
            + self.theta_head.param_count()
            + self.digital_head.param_count()
    }

    /// Cost of decoding one set of `K x B` bits.
    pub fn cost(&self) -> OpCount {
        let h = self.fc1.out_dim;
        self.conv.cost(self.n_bits)
            + self.se.cost(self.n_bits)
            + self.fc1.cost(1)
            + self.bn1.cost(1)
            + OpCount::elementwise(h)
            + self.fc2.cost(1)
            + self.bn2.cost(1)
            + OpCount::elementwise(h)
            + self.theta_head.cost(1)
            + self.digital_head.cost(1)
    }
}

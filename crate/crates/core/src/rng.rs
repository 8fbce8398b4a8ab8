//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, stream)`
//! pair, so that training batches, evaluation sets and parameter
//! initialisation never share a sequence and any of them can be regenerated
//! in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream used for parameter initialisation.
pub const STREAM_INIT: u64 = 1;
/// Stream used for the fixed baseline pilot phases.
pub const STREAM_BASELINE_PILOTS: u64 = 2;
/// Stream used for channel draws of an evaluation set.
pub const STREAM_EVAL_CHANNELS: u64 = 3;
/// Stream used for receiver noise during evaluation.
pub const STREAM_EVAL_NOISE: u64 = 4;
/// First stream handed out to training batches.
pub const STREAM_TRAIN_BASE: u64 = 1 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for training batch `batch` of epoch `epoch`.
pub fn train_batch_rng(seed: u64, epoch: usize, batch: usize, batches_per_epoch: usize) -> SimRng {
    let index = (epoch * batches_per_epoch + batch) as u64;
    stream_rng(seed, STREAM_TRAIN_BASE + index)
}

//! Minimal differentiable-computation core.
//!
//! Values live on a [`Tape`]; parameters live in a [`ParamStore`] and are
//! copied onto the tape by the layers that use them. After
//! [`Tape::backward`], [`ParamStore::accumulate_grads`] moves parameter
//! gradients back into the store where [`Adam`] consumes them.
//!
//! Complex quantities inside the trainable graph are carried as separate
//! real and imaginary channels.

mod checkpoint;
mod layers;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    BatchNorm1d, Conv1d, Dense, LayerNorm, Mode, OpCount, TransformerDims, TransformerLayer,
};
pub(crate) use ops::gemm;
pub use ops::sigmoid;
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Grads, Op, StatUpdate, Tape, Var};
pub use tensor::Tensor;

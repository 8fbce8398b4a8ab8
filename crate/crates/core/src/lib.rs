//! Joint channel estimation, feedback and beamforming (EFB) for FDD massive
//! MU-MIMO with a subarray hybrid beamforming front end.
//!
//! The crate is organised bottom-up:
//!
//! * [`sysmodel`]: system constants, the antenna connector, ULA steering
//!   vectors and Saleh-Valenzuela channel sampling.
//! * [`nn`]: a small reverse-mode differentiation tape with the layers the
//!   learned pipeline needs, plus Adam, cosine annealing and checkpoints.
//! * [`efb`]: the learned pipeline itself (pilot bank, per-user encoders,
//!   shared decoder, power normalisation, sum-rate objective, training).
//! * [`baselines`]: OMP channel estimation, path quantisation and ZF-based
//!   subarray hybrid precoding.
//! * [`eval`]: test-set evaluation, CSV reports and complexity accounting.

pub mod baselines;
pub mod efb;
mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod sysmodel;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use sysmodel::{ChannelRealization, SystemConfig};

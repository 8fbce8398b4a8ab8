//! The learned feedback pipeline: pilots, per-user encoders with a binary
//! quantizer, a shared decoder and the sum-rate objective.

mod beamformer;
mod decoder;
mod encoder;
mod model;
mod pilot;
mod quantizer;
mod se;
mod train;

pub use beamformer::{
    analog_connector, digital_from_raw, normalize_power, rate_from_gains, sum_rate, sum_rate_loss, Beamformer,
};
pub use decoder::Decoder;
pub use encoder::Encoder;
pub use model::{EfbModel, FeedbackBits, ForwardOptions, LossOutput};
pub use pilot::{draw_pilot_noise, pilot_matrix, pilot_transmit, receive, receive_on_tape, PilotBank};
pub use quantizer::{hard_sign, quantize, surrogate_slope, QuantizerMode};
pub use se::SeBlock;
pub use train::{EpochStats, TrainConfig, Trainer};

use serde::{Deserialize, Serialize};

use crate::nn::TransformerDims;
use crate::{Error, Result};

/// Layer widths of the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub conv_width: usize,
    pub encoder_channels: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Hidden width of the encoder FC stage, as a multiple of `B`.
    pub encoder_hidden_per_bit: usize,
    /// `lambda = floor(decoder_budget / B)`.
    pub decoder_budget: usize,
    pub decoder_hidden: usize,
    /// Upper bound on the SE reduction ratio; the decoder uses the largest
    /// divisor of its channel count not above it.
    pub se_reduction: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_width: 9,
            encoder_channels: 8,
            transformer_layers: 3,
            heads: 2,
            ff_dim: 160,
            encoder_hidden_per_bit: 4,
            decoder_budget: 512,
            decoder_hidden: 512,
            se_reduction: 4,
        }
    }
}

impl ArchConfig {
    pub fn transformer_dims(&self) -> TransformerDims {
        TransformerDims { model_dim: self.encoder_channels, heads: self.heads, ff_dim: self.ff_dim }
    }

    pub fn encoder_hidden(&self, n_bits: usize) -> usize {
        self.encoder_hidden_per_bit * n_bits
    }

    /// Decoder channel expansion factor for `n_bits` feedback bits.
    pub fn expansion(&self, n_bits: usize) -> Result<usize> {
        match self.decoder_budget.checked_div(n_bits) {
            Some(l) if l > 0 => Ok(l),
            _ => Err(Error::Config(format!(
                "expansion factor floor({}/{n_bits}) is zero",
                self.decoder_budget
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = [
            ("conv_width", self.conv_width),
            ("encoder_channels", self.encoder_channels),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("encoder_hidden_per_bit", self.encoder_hidden_per_bit),
            ("decoder_hidden", self.decoder_hidden),
            ("se_reduction", self.se_reduction),
        ];
        if let Some((name, _)) = zero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.conv_width % 2 == 0 {
            return Err(Error::Config(format!("conv_width must be odd, got {}", self.conv_width)));
        }
        if self.encoder_channels % self.heads != 0 {
            return Err(Error::Config("encoder_channels must be divisible by heads".into()));
        }
        Ok(())
    }
}

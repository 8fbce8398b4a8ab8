use std::fmt;
use std::str::FromStr;

use crate::efb::EfbModel;
use crate::nn::OpCount;
use crate::{Error, Result};

/// How an [`OpCount`] is collapsed into a single FLOP figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlopConvention {
    /// One FLOP per multiply-accumulate plus one per elementwise operation;
    /// bias additions are folded into the MACs. This is how common
    /// profilers report "FLOPs".
    #[default]
    Macs,
    /// Two FLOPs per multiply-accumulate, plus bias additions and
    /// elementwise operations.
    TwoPerMac,
}

impl FlopConvention {
    pub fn flops(self, c: OpCount) -> u64 {
        match self {
            Self::Macs => c.macs + c.elementwise,
            Self::TwoPerMac => 2 * c.macs + c.bias_adds + c.elementwise,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Macs => "macs",
            Self::TwoPerMac => "two-per-mac",
        }
    }
}

impl fmt::Display for FlopConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlopConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macs" => Ok(Self::Macs),
            "two-per-mac" => Ok(Self::TwoPerMac),
            _ => Err(Error::Config(format!("unknown FLOP convention {s:?}; expected macs or two-per-mac"))),
        }
    }
}

/// Learnable parameters and per-sample forward cost. `*_per_ue` covers
/// one encoder; totals cover the decoder and all encoders, and the
/// parameter total also includes the pilot phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityReport {
    pub params_total: usize,
    pub params_per_ue: usize,
    pub params_decoder: usize,
    pub params_pilots: usize,
    pub flops_total: u64,
    pub flops_per_ue: u64,
    pub flops_decoder: u64,
}

pub fn count_params(model: &EfbModel) -> (usize, usize) {
    (model.param_count(), model.encoders.first().map_or(0, |e| e.param_count()))
}

pub fn count_flops(model: &EfbModel, convention: FlopConvention) -> (u64, u64) {
    let per_ue = model.encoders.first().map_or(0, |e| convention.flops(e.cost()));
    let encoders: u64 = model.encoders.iter().map(|e| convention.flops(e.cost())).sum();
    (encoders + convention.flops(model.decoder.cost()), per_ue)
}

pub fn complexity(model: &EfbModel, convention: FlopConvention) -> ComplexityReport {
    let (params_total, params_per_ue) = count_params(model);
    let (flops_total, flops_per_ue) = count_flops(model, convention);
    ComplexityReport {
        params_total,
        params_per_ue,
        params_decoder: model.decoder.param_count(),
        params_pilots: model.pilot.param_count(),
        flops_total,
        flops_per_ue,
        flops_decoder: convention.flops(model.decoder.cost()),
    }
}

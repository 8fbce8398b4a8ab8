use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::omp::EstimatedPaths;
use crate::{Error, Result};

/// Range of the gain magnitude quantizer.
pub const GAIN_MAGNITUDE_MAX: f64 = 3.0;

/// Bits per scalar for `3 L_path` scalars ordered `|alpha|, arg alpha, phi`
/// path by path; the first `B mod 3 L_path` scalars get one extra bit.
pub fn bit_split(n_bits: usize, n_paths: usize) -> Result<Vec<usize>> {
    let scalars = 3 * n_paths;
    if n_paths == 0 || n_bits < scalars {
        return Err(Error::Config(format!(
            "{n_bits} bits cannot cover the {scalars} scalars of {n_paths} paths"
        )));
    }
    let (base, extra) = (n_bits / scalars, n_bits % scalars);
    Ok((0..scalars).map(|i| base + usize::from(i < extra)).collect())
}

fn ranges(scalar: usize) -> (f64, f64) {
    match scalar % 3 {
        0 => (0.0, GAIN_MAGNITUDE_MAX),
        1 => (-PI, PI),
        _ => (-FRAC_PI_2, FRAC_PI_2),
    }
}

/// Index of the uniform cell containing `x`; values outside the range
/// go to the nearest end cell.
pub fn uniform_code(x: f64, lo: f64, hi: f64, bits: usize) -> u64 {
    let levels = 1u64 << bits;
    let cell = ((x - lo) / (hi - lo) * levels as f64).floor();
    cell.clamp(0.0, (levels - 1) as f64) as u64
}

pub fn uniform_midpoint(code: u64, lo: f64, hi: f64, bits: usize) -> f64 {
    lo + (code as f64 + 0.5) * (hi - lo) / (1u64 << bits) as f64
}

/// Wraps an angle into `[-pi, pi)`.
fn wrap(angle: f64) -> f64 {
    (angle + PI).rem_euclid(2.0 * PI) - PI
}

/// Encodes the paths into exactly `n_bits` bits, most significant first
/// within each scalar.
pub fn quantize_paths(paths: &EstimatedPaths, n_bits: usize) -> Result<Vec<bool>> {
    let split = bit_split(n_bits, paths.gains.len())?;
    let values = paths
        .gains
        .iter()
        .zip(&paths.aods)
        .flat_map(|(g, &phi)| [g.norm(), wrap(g.arg()), phi]);
    let mut bits = Vec::with_capacity(n_bits);
    for (i, (x, &b)) in values.zip(&split).enumerate() {
        let (lo, hi) = ranges(i);
        let code = uniform_code(x, lo, hi, b);
        bits.extend((0..b).rev().map(|s| code >> s & 1 == 1));
    }
    Ok(bits)
}

pub fn dequantize_paths(bits: &[bool], n_paths: usize) -> Result<EstimatedPaths> {
    let split = bit_split(bits.len(), n_paths)?;
    let mut values = Vec::with_capacity(split.len());
    let mut at = 0;
    for (i, &b) in split.iter().enumerate() {
        let code = bits[at..at + b].iter().fold(0u64, |acc, &bit| acc << 1 | u64::from(bit));
        at += b;
        let (lo, hi) = ranges(i);
        values.push(uniform_midpoint(code, lo, hi, b));
    }
    Ok(EstimatedPaths {
        gains: values.chunks(3).map(|v| Complex64::from_polar(v[0], v[1])).collect(),
        aods: values.chunks(3).map(|v| v[2]).collect(),
    })
}

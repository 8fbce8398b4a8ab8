//! Binary channel dumps.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    6 bytes  "EFBCH1"
//! n_t      u32
//! k        u32
//! l_path   u32
//! count    u64
//! seed     u64
//! channels count x K x N_t complex64 (f32 re, f32 im), realization-major, then user, then antenna
//! paths    count blocks; each block is L_path x K complex64 gains (path-major)
//!          followed by L_path x K f32 AoDs in radians (path-major)
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use num_complex::Complex64;

use super::ChannelRealization;
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 6] = b"EFBCH1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub n_antennas: u32,
    pub n_users: u32,
    pub n_paths: u32,
    pub count: u64,
    pub seed: u64,
}

fn write_c64<W: Write>(w: &mut W, z: Complex64) -> std::io::Result<()> {
    w.write_f32::<LittleEndian>(z.re as f32)?;
    w.write_f32::<LittleEndian>(z.im as f32)
}

fn read_c64<R: Read>(r: &mut R) -> std::io::Result<Complex64> {
    let re = r.read_f32::<LittleEndian>()?;
    let im = r.read_f32::<LittleEndian>()?;
    Ok(Complex64::new(re as f64, im as f64))
}

pub fn write_dataset<W: Write>(
    mut w: W,
    n_antennas: usize,
    n_users: usize,
    n_paths: usize,
    seed: u64,
    realizations: &[ChannelRealization],
) -> Result<()> {
    for real in realizations {
        if real.channels.shape() != (n_users, n_antennas) || real.gains.shape() != (n_paths, n_users)
        {
            return Err(Error::Shape("realization does not match dataset header".into()));
        }
    }
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(n_antennas as u32)?;
    w.write_u32::<LittleEndian>(n_users as u32)?;
    w.write_u32::<LittleEndian>(n_paths as u32)?;
    w.write_u64::<LittleEndian>(realizations.len() as u64)?;
    w.write_u64::<LittleEndian>(seed)?;
    for real in realizations {
        for k in 0..n_users {
            for n in 0..n_antennas {
                write_c64(&mut w, real.channels[(k, n)])?;
            }
        }
    }
    for real in realizations {
        for p in 0..n_paths {
            for k in 0..n_users {
                write_c64(&mut w, real.gains[(p, k)])?;
            }
        }
        for p in 0..n_paths {
            for k in 0..n_users {
                w.write_f32::<LittleEndian>(real.aods[(p, k)] as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<(DatasetHeader, Vec<ChannelRealization>)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not a channel dataset (bad magic)".into()));
    }
    let header = DatasetHeader {
        n_antennas: r.read_u32::<LittleEndian>()?,
        n_users: r.read_u32::<LittleEndian>()?,
        n_paths: r.read_u32::<LittleEndian>()?,
        count: r.read_u64::<LittleEndian>()?,
        seed: r.read_u64::<LittleEndian>()?,
    };
    let (nt, k, lp) = (header.n_antennas as usize, header.n_users as usize, header.n_paths as usize);
    let count = usize::try_from(header.count).map_err(|_| Error::Format("count overflows".into()))?;
    let mut channels = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut h = DMatrix::zeros(k, nt);
        for u in 0..k {
            for n in 0..nt {
                h[(u, n)] = read_c64(&mut r)?;
            }
        }
        channels.push(h);
    }
    let mut out = Vec::with_capacity(channels.len());
    for h in channels {
        let mut gains = DMatrix::zeros(lp, k);
        let mut aods = DMatrix::zeros(lp, k);
        for p in 0..lp {
            for u in 0..k {
                gains[(p, u)] = read_c64(&mut r)?;
            }
        }
        for p in 0..lp {
            for u in 0..k {
                aods[(p, u)] = r.read_f32::<LittleEndian>()? as f64;
            }
        }
        out.push(ChannelRealization { channels: h, gains, aods });
    }
    Ok((header, out))
}

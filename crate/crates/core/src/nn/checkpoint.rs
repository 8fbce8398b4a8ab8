//! Checkpoint container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        6 bytes "EFBCK1"
//! version      u32 (currently 1)
//! config       u32 n_antennas, u32 n_users, u32 n_pilots, u32 n_bits,
//!              f64 power, f64 snr_db, u32 n_paths, f64 spacing_ratio
//! step         u64 optimizer steps taken
//! records      u32 count, then per record:
//!              u32 name length, UTF-8 name, u8 dtype (0 = f32),
//!              u32 rank, rank x u32 dims, f32 payload
//! ```
//!
//! Batch-norm running statistics are stored as ordinary records whose names
//! end in `.running_mean` / `.running_var`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::ParamStore;
use crate::sysmodel::SystemConfig;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"EFBCK1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Record {
    pub fn is_buffer(&self) -> bool {
        self.name.ends_with(".running_mean") || self.name.ends_with(".running_var")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SystemConfig,
    pub step: u64,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn from_store(config: &SystemConfig, step: u64, store: &ParamStore) -> Self {
        let records = store
            .iter()
            .map(|(_, p)| Record {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Self { config: config.clone(), step, records }
    }

    /// Scalars in learnable records (excludes running statistics).
    pub fn learnable_scalars(&self) -> usize {
        self.records.iter().filter(|r| !r.is_buffer()).map(|r| r.data.len()).sum()
    }

    /// Copies every record into the same-named parameter of `store`. Names
    /// and shapes must match one-to-one.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.records.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} records, model has {} parameters",
                self.records.len(),
                store.len()
            )));
        }
        for record in &self.records {
            let id = store
                .find(&record.name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {}", record.name)))?;
            let param = store.get_mut(id);
            if param.value.shape() != record.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, checkpoint holds {:?}",
                    record.name,
                    param.value.shape(),
                    record.shape
                )));
            }
            for (dst, &src) in param.value.data_mut().iter_mut().zip(&record.data) {
                *dst = src as f64;
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        for v in [c.n_antennas, c.n_users, c.n_pilots, c.n_bits] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        w.write_f64::<LittleEndian>(c.power)?;
        w.write_f64::<LittleEndian>(c.snr_db)?;
        w.write_u32::<LittleEndian>(c.n_paths as u32)?;
        w.write_f64::<LittleEndian>(c.spacing_ratio)?;
        w.write_u64::<LittleEndian>(self.step)?;
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        for r in &self.records {
            w.write_u32::<LittleEndian>(r.name.len() as u32)?;
            w.write_all(r.name.as_bytes())?;
            w.write_u8(DTYPE_F32)?;
            w.write_u32::<LittleEndian>(r.shape.len() as u32)?;
            for &d in &r.shape {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in &r.data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut counts = [0usize; 4];
        for c in &mut counts {
            *c = r.read_u32::<LittleEndian>()? as usize;
        }
        let power = r.read_f64::<LittleEndian>()?;
        let snr_db = r.read_f64::<LittleEndian>()?;
        let n_paths = r.read_u32::<LittleEndian>()? as usize;
        let spacing_ratio = r.read_f64::<LittleEndian>()?;
        let config = SystemConfig {
            n_antennas: counts[0],
            n_users: counts[1],
            n_pilots: counts[2],
            n_bits: counts[3],
            power,
            snr_db,
            n_paths,
            spacing_ratio,
        };
        let step = r.read_u64::<LittleEndian>()?;
        let n_records = r.read_u32::<LittleEndian>()? as usize;
        let mut records = Vec::with_capacity(n_records.min(4096));
        for _ in 0..n_records {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let dtype = r.read_u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("record {name} has unknown dtype {dtype}")));
            }
            let rank = r.read_u32::<LittleEndian>()? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut data = vec![0f32; numel];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            records.push(Record { name, shape, data });
        }
        Ok(Self { config, step, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

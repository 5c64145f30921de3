//! Binary model snapshots.
//!
//! Little-endian layout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `DAM1` |
//! | 4 | version (u32) |
//! | 4 | energy kind (u32: 0 polynomial, 1 rectified) |
//! | 4 | power `n` (u32) |
//! | 4 | memories `K` (u32) |
//! | 4 | visible `N` (u32) |
//! | 4 | classes `N_c` (u32) |
//! | 8 | `β` (f64) |
//! | 4 | loss power `m` (u32) |
//! | 8·K·(N+N_c) | weights, f64 row-major |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::ClassifierModel;
use crate::{EnergyKind, EnergyModel, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DAM1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 8 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ClassifierModel,
    pub loss_power: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let dim = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} = {v} does not fit in u32")))
        };
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.weights().len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            m.energy().kind().code() as u32,
            m.energy().power(),
            dim(m.n_memories(), "K")?,
            dim(m.n_visible(), "N")?,
            dim(m.n_classes(), "N_c")?,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&m.beta().to_le_bytes());
        out.extend_from_slice(&self.loss_power.to_le_bytes());
        for w in m.weights().iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected DAM1".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = u8::try_from(u32_at(8))
            .ok()
            .and_then(EnergyKind::from_code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown energy kind {}", u32_at(8))))?;
        let power = u32_at(12);
        let (k, n, nc) = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize);
        let beta = f64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes"));
        let loss_power = u32_at(36);
        let count = k
            .checked_mul(n + nc)
            .ok_or_else(|| Error::Checkpoint("weight count overflows".into()))?;
        if bytes.len() != HEADER_LEN + 8 * count {
            return Err(Error::Checkpoint(format!(
                "expected {} weight bytes, found {}",
                8 * count,
                bytes.len() - HEADER_LEN
            )));
        }
        let weights: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let weights = Array2::from_shape_vec((k, n + nc), weights).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let energy = EnergyModel::new(power, kind).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let model = ClassifierModel::new(weights, n, nc, energy, beta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { model, loss_power })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::file(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::file(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

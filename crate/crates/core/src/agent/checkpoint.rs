//! `AFCK` parameter checkpoints.
//!
//! Layout (all little-endian): magic `AFCK`, `u32` version, five `u32` dims
//! (`D_full`, `D_mem`, `H`, `C`, trained horizon `K`), then each parameter
//! block in [`BLOCK_NAMES`](super::BLOCK_NAMES) order as a `u32` length
//! followed by that many `f64` values.

use std::path::Path;

use crate::codec::{put_u32, to_u32, write_atomic, Reader};
use crate::error::{FormatError, Result};

use super::{AgentParameters, Dims};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: AgentParameters,
    /// Number of steps the agent was trained for.
    pub horizon: usize,
}

/// Expected length of each block in `BLOCK_NAMES` order, `None` on overflow.
fn block_lengths(d: Dims) -> Option<[usize; 7]> {
    let h = d.hidden;
    let four_h = h.checked_mul(4)?;
    Some([
        four_h.checked_mul(d.d_full.checked_add(d.d_mem)?.checked_add(h)?)?,
        four_h,
        d.d_mem.checked_mul(h)?,
        d.classes.checked_mul(h)?,
        d.classes,
        h,
        h,
    ])
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.params.dims();
        let mut out = Vec::with_capacity(28 + 8 * self.params.param_count() + 28);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for (v, what) in [
            (d.d_full, "d_full"),
            (d.d_mem, "d_mem"),
            (d.hidden, "hidden"),
            (d.classes, "classes"),
            (self.horizon, "horizon"),
        ] {
            put_u32(&mut out, to_u32(v, what)?);
        }
        for (name, block) in self.params.blocks() {
            put_u32(&mut out, to_u32(block.len(), name)?);
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            }
            .into());
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32("dims")? as usize;
        }
        let [d_full, d_mem, hidden, classes, horizon] = dims;
        let dims = Dims {
            d_full,
            d_mem,
            hidden,
            classes,
        };
        dims.validate()
            .map_err(|e| FormatError::DimMismatch(format!("checkpoint dims: {e}")))?;
        if horizon == 0 {
            return Err(FormatError::DimMismatch("horizon must be at least 1".into()).into());
        }
        let expected =
            block_lengths(dims).ok_or_else(|| FormatError::DimMismatch(format!("checkpoint dims too large: {dims:?}")))?;
        // read every block before allocating, so a corrupted header cannot
        // request more memory than the file holds
        let mut values = Vec::with_capacity(expected.len());
        for (name, want) in super::BLOCK_NAMES.iter().zip(expected) {
            let len = r.u32("block length")? as usize;
            if len != want {
                return Err(FormatError::DimMismatch(format!("block {name}: expected {want} values, found {len}")).into());
            }
            values.push(r.f64s(len, "parameter block")?);
        }
        let mut params = AgentParameters::zeros(dims)
            .map_err(|e| FormatError::DimMismatch(format!("checkpoint dims: {e}")))?;
        for ((_, block), v) in params.blocks_mut().into_iter().zip(&values) {
            block.copy_from_slice(v);
        }
        r.finish()?;
        Ok(Checkpoint { params, horizon })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

//! `AFV1` dataset files.
//!
//! All integers are little-endian `u32`, all features little-endian `f32`:
//!
//! ```text
//! "AFV1" version n_videos C
//! per video: id label T D_full T_d D_mem
//!            T × D_full features (row-major)
//!            T_d × D_mem memory entries (row-major)
//! ```
//!
//! Values are widened to `f64` on load. Signal-window annotations are not
//! stored.

use std::path::Path;

use crate::codec::{put_u32, to_u32, write_atomic, Reader};
use crate::error::{Error, FormatError, Result};
use crate::memory::GlobalMemory;
use crate::numerics::Matrix;

use super::{Dataset, FeatureSequence, Video};

pub const DATASET_MAGIC: [u8; 4] = *b"AFV1";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_u32(&mut out, to_u32(ds.len(), "n_videos")?);
    put_u32(&mut out, to_u32(ds.classes, "classes")?);
    for v in &ds.videos {
        let seq = &v.sequence;
        put_u32(&mut out, seq.id);
        put_u32(&mut out, to_u32(seq.label, "label")?);
        put_u32(&mut out, to_u32(seq.len(), "T")?);
        put_u32(&mut out, to_u32(seq.dim(), "D_full")?);
        put_u32(&mut out, to_u32(v.memory.len(), "T_d")?);
        put_u32(&mut out, to_u32(v.memory.dim(), "D_mem")?);
        for x in seq.features.data().iter().chain(v.memory.entries().data()) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn dim_error(msg: String) -> Error {
    FormatError::DimMismatch(msg).into()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        }
        .into());
    }
    let n = r.u32("video count")? as usize;
    let classes = r.u32("class count")? as usize;
    if classes < 2 {
        return Err(dim_error(format!("class count {classes} < 2")));
    }
    let mut videos = Vec::with_capacity(n.min(1 << 16));
    let mut shared_dims: Option<(usize, usize)> = None;
    for _ in 0..n {
        let id = r.u32("video header")?;
        let label = r.u32("video header")? as usize;
        let t = r.u32("video header")? as usize;
        let d_full = r.u32("video header")? as usize;
        let t_d = r.u32("video header")? as usize;
        let d_mem = r.u32("video header")? as usize;
        if label >= classes {
            return Err(dim_error(format!("video {id}: label {label} >= {classes} classes")));
        }
        if t == 0 || d_full == 0 || t_d == 0 || d_mem == 0 || d_mem % 2 != 0 {
            return Err(dim_error(format!(
                "video {id}: invalid shape T={t} D_full={d_full} T_d={t_d} D_mem={d_mem}"
            )));
        }
        match shared_dims {
            Some(dims) if dims != (d_full, d_mem) => {
                return Err(dim_error(format!(
                    "video {id}: dims ({d_full}, {d_mem}) differ from earlier videos {dims:?}"
                )));
            }
            _ => shared_dims = Some((d_full, d_mem)),
        }
        let count = t.checked_mul(d_full).ok_or_else(|| dim_error("feature block too large".into()))?;
        let features = r.f32s(count, "features")?;
        let count = t_d.checked_mul(d_mem).ok_or_else(|| dim_error("memory block too large".into()))?;
        let entries = r.f32s(count, "memory")?;

        let features = Matrix::from_vec(t, d_full, features).map_err(|e| dim_error(format!("video {id}: {e}")))?;
        let entries = Matrix::from_vec(t_d, d_mem, entries).map_err(|e| dim_error(format!("video {id}: {e}")))?;
        videos.push(Video {
            sequence: FeatureSequence::new(id, features, label).map_err(|e| dim_error(e.to_string()))?,
            memory: GlobalMemory::new(entries).map_err(|e| dim_error(e.to_string()))?,
            signal: None,
        });
    }
    r.finish()?;
    Ok(Dataset { classes, videos })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

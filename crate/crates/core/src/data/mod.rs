//! Feature sequences, their memory banks, synthetic generation and the `AFV1`
//! file format.

mod format;
mod synthetic;

pub use format::{read_dataset, write_dataset, decode_dataset, encode_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use synthetic::{derive_memory, generate, memory_indices, MemoryProjection, SyntheticSpec};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::memory::GlobalMemory;
use crate::numerics::{Matrix, Rng};

/// Full-resolution features `v_1..v_T` of one video and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: u32,
    /// `T × D_full`, one row per frame.
    pub features: Matrix,
    pub label: usize,
}

impl FeatureSequence {
    pub fn new(id: u32, features: Matrix, label: usize) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::invalid(format!(
                "sequence {id} must have at least one frame of positive dimension"
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite(format!("features of sequence {id}")));
        }
        Ok(FeatureSequence { id, features, label })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// A sequence together with its memory bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub sequence: FeatureSequence,
    pub memory: GlobalMemory,
    /// Frames carrying the class signal, when known (synthetic data only;
    /// never shown to the agent and not persisted).
    pub signal: Option<Range<usize>>,
}

impl Video {
    pub fn label(&self) -> usize {
        self.sequence.label
    }

    pub fn frames(&self) -> &Matrix {
        &self.sequence.features
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn new(classes: usize, videos: Vec<Video>) -> Result<Self> {
        let ds = Dataset { classes, videos };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// `(D_full, D_mem)` shared by every video, if there is at least one.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.videos.first().map(|v| (v.sequence.dim(), v.memory.dim()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid(format!("need at least two classes, got {}", self.classes)));
        }
        let dims = self.dims();
        for v in &self.videos {
            if v.label() >= self.classes {
                return Err(Error::invalid(format!(
                    "video {} has label {} but only {} classes",
                    v.sequence.id,
                    v.label(),
                    self.classes
                )));
            }
            if Some((v.sequence.dim(), v.memory.dim())) != dims {
                return Err(Error::invalid(format!("video {} has inconsistent dimensions", v.sequence.id)));
            }
        }
        Ok(())
    }

    /// Seeded 80/20-style split: a shuffle of all indices, the first
    /// `round(train_fraction · n)` of which form the training part.
    pub fn split(&self, seed: u64, train_fraction: f64) -> Split {
        let mut order: Vec<usize> = (0..self.len()).collect();
        Rng::new(seed).derive(SPLIT_STREAM).shuffle(&mut order);
        let n_train = ((self.len() as f64) * train_fraction).round() as usize;
        let validation = order.split_off(n_train.min(order.len()));
        Split {
            seed,
            train: order,
            validation,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Video> {
        indices.iter().map(|&i| &self.videos[i]).collect()
    }
}

const SPLIT_STREAM: u64 = 0x5911_7000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_partition() {
        let spec = SyntheticSpec {
            length: 8,
            t_d: 4,
            signal_window: 2,
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec, 50).unwrap();
        let a = ds.split(3, 0.8);
        assert_eq!(a, ds.split(3, 0.8));
        assert_eq!(a.train.len(), 40);
        assert_eq!(a.validation.len(), 10);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_ne!(a.train, ds.split(4, 0.8).train);
    }
}

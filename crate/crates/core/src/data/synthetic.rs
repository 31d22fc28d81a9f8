//! Synthetic stand-in for per-frame CNN features.
//!
//! Each class owns a prototype vector. A video of class `y` is Gaussian noise
//! everywhere except a contiguous window of frames where the prototype is
//! added. Prototypes can share a common direction, so that "something is
//! happening here" is easier to see than "which class it is". The memory bank
//! samples `T_d` frames uniformly and passes them through a fixed random
//! projection plus extra noise, so it is a weaker view of the same video.

use crate::error::{Error, Result};
use crate::memory::GlobalMemory;
use crate::numerics::{dot, Matrix, Rng};

use super::{Dataset, FeatureSequence, Video};

const PROTOTYPE_STREAM: u64 = 0xA11CE;
const PROJECTION_STREAM: u64 = 0xB0B;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Frames per video, `T`.
    pub length: usize,
    pub d_full: usize,
    pub d_mem: usize,
    /// Memory entries per video, `T_d`.
    pub t_d: usize,
    pub signal_window: usize,
    /// Norm of each class prototype.
    pub signal_strength: f64,
    /// Fraction of each prototype's energy in a direction shared by all
    /// classes: `μ_c ∝ √ρ·e + √(1−ρ)·d_c`.
    pub shared_signal: f64,
    pub noise_stddev: f64,
    /// Gain of the memory projection; entries are `N(0, gain²/D_full)`.
    pub memory_gain: f64,
    /// Extra noise added to projected memory entries.
    pub memory_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 5,
            length: 64,
            d_full: 16,
            d_mem: 8,
            t_d: 16,
            signal_window: 4,
            signal_strength: 20.0,
            shared_signal: 0.97,
            noise_stddev: 1.0,
            memory_gain: 0.1,
            memory_noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.length == 0 || self.d_full == 0 || self.d_mem == 0 || self.t_d == 0 {
            return Err(Error::invalid("lengths and dimensions must be positive"));
        }
        if self.t_d >= self.length {
            return Err(Error::invalid(format!(
                "memory size {} must be smaller than sequence length {}",
                self.t_d, self.length
            )));
        }
        if self.signal_window == 0 || self.signal_window > self.length {
            return Err(Error::invalid(format!(
                "signal window {} must lie in 1..={}",
                self.signal_window, self.length
            )));
        }
        if !(0.0..=1.0).contains(&self.shared_signal) {
            return Err(Error::invalid(format!("shared signal fraction must lie in [0, 1], got {}", self.shared_signal)));
        }
        if self.d_mem % 2 != 0 {
            return Err(Error::invalid(format!("memory dimension must be even, got {}", self.d_mem)));
        }
        if self.signal_strength < 0.0 || self.noise_stddev < 0.0 || self.memory_noise < 0.0 || self.memory_gain < 0.0 {
            return Err(Error::invalid("strengths and noise levels must be non-negative"));
        }
        Ok(())
    }

    /// Class prototypes, one row per class, each of norm `signal_strength`.
    pub fn prototypes(&self) -> Matrix {
        let mut rng = Rng::new(self.seed).derive(PROTOTYPE_STREAM);
        let mut shared: Vec<f64> = (0..self.d_full).map(|_| rng.standard_normal()).collect();
        normalize(&mut shared);
        let mut m = Matrix::from_fn(self.classes, self.d_full, |_, _| rng.standard_normal());
        let (a, b) = (self.shared_signal.sqrt(), (1.0 - self.shared_signal).sqrt());
        for c in 0..self.classes {
            let row = m.row_mut(c);
            // class-specific part orthogonal to the shared direction
            let along = dot(row, &shared);
            row.iter_mut().zip(&shared).for_each(|(v, e)| *v -= along * e);
            normalize(row);
            row.iter_mut().zip(&shared).for_each(|(v, e)| *v = self.signal_strength * (a * e + b * *v));
        }
        m
    }

    pub fn projection(&self) -> MemoryProjection {
        MemoryProjection::random(self.d_full, self.d_mem, self.memory_gain, self.memory_noise, self.seed)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Fixed linear map `D_full → D_mem` followed by additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryProjection {
    /// `D_mem × D_full`.
    pub matrix: Matrix,
    pub noise_stddev: f64,
}

impl MemoryProjection {
    /// Entries `N(0, gain²/D_full)`, drawn from a stream keyed by `seed`.
    pub fn random(d_full: usize, d_mem: usize, gain: f64, noise_stddev: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed).derive(PROJECTION_STREAM);
        let scale = gain / (d_full as f64).sqrt();
        MemoryProjection {
            matrix: Matrix::from_fn(d_mem, d_full, |_, _| scale * rng.standard_normal()),
            noise_stddev,
        }
    }
}

/// `⌊j·T/T_d⌋` for `j = 0..T_d`.
pub fn memory_indices(length: usize, t_d: usize) -> Result<Vec<usize>> {
    if t_d == 0 || t_d >= length {
        return Err(Error::invalid(format!(
            "memory size {t_d} must satisfy 1 <= T_d < T = {length}"
        )));
    }
    Ok((0..t_d).map(|j| j * length / t_d).collect())
}

pub fn derive_memory(seq: &FeatureSequence, t_d: usize, projection: &MemoryProjection, rng: &mut Rng) -> Result<GlobalMemory> {
    let indices = memory_indices(seq.len(), t_d)?;
    if projection.matrix.cols() != seq.dim() {
        return Err(Error::shape("derive_memory", seq.dim(), projection.matrix.cols()));
    }
    let d_mem = projection.matrix.rows();
    let mut entries = Matrix::zeros(t_d, d_mem);
    for (j, &frame) in indices.iter().enumerate() {
        let projected = projection.matrix.matvec(seq.features.row(frame))?;
        for (dst, p) in entries.row_mut(j).iter_mut().zip(projected) {
            *dst = f32_round(p + projection.noise_stddev * rng.standard_normal());
        }
    }
    GlobalMemory::new(entries)
}

/// Values are kept at `f32` precision so datasets survive the on-disk format
/// bit for bit.
fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate(spec: &SyntheticSpec, n_videos: usize) -> Result<Dataset> {
    spec.validate()?;
    let prototypes = spec.prototypes();
    let projection = spec.projection();
    let videos = (0..n_videos)
        .map(|i| {
            let mut rng = Rng::new(spec.seed ^ i as u64);
            let label = i % spec.classes;
            let offset = rng.below(spec.length - spec.signal_window + 1);
            let window = offset..offset + spec.signal_window;
            let proto = prototypes.row(label);
            let features = Matrix::from_fn(spec.length, spec.d_full, |t, d| {
                let noise = spec.noise_stddev * rng.standard_normal();
                let signal = if window.contains(&t) { proto[d] } else { 0.0 };
                f32_round(signal + noise)
            });
            let id = u32::try_from(i).map_err(|_| Error::invalid("too many videos"))?;
            let sequence = FeatureSequence::new(id, features, label)?;
            let memory = derive_memory(&sequence, spec.t_d, &projection, &mut rng)?;
            Ok(Video {
                sequence,
                memory,
                signal: Some(window),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(spec.classes, videos)
}

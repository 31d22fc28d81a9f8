//! Fixed-budget comparators: mean pooling of per-frame classifier scores and a
//! plain LSTM over the sampled frames. Both see only full-resolution frames.

use rayon::prelude::*;

use crate::agent::{LstmCache, LstmCell};
use crate::data::Video;
use crate::error::{Error, Result};
use crate::learning::{argmax, clip_global_norm, loss_classification, ParamBlocks, Sgd};
use crate::numerics::{mix_seed, softmax, Matrix, Rng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SamplingMode {
    /// `⌊(i + 0.5)·T/n⌋` for `i = 0..n`.
    #[default]
    Uniform,
    /// `n` distinct frames drawn at random.
    Random,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplingMode::Uniform),
            "random" => Ok(SamplingMode::Random),
            _ => Err(Error::Config(format!("unknown sampling mode `{s}` (expected uniform or random)"))),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Uniform => "uniform",
            SamplingMode::Random => "random",
        })
    }
}

/// Sorted frame indices for an `n`-frame budget.
pub fn sample_frames(total: usize, n: usize, mode: SamplingMode, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(Error::invalid(format!("frame budget {n} must lie in 1..={total}")));
    }
    let mut idx = match mode {
        SamplingMode::Uniform => (0..n).map(|i| ((2 * i + 1) * total) / (2 * n)).collect(),
        SamplingMode::Random => rng.sample_indices(total, n)?,
    };
    idx.sort_unstable();
    Ok(idx)
}

/// Optimizer settings shared by both baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    /// Hidden size of the LSTM baseline.
    pub hidden: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 100,
            lr: 0.003,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            clip_norm: Some(5.0),
            hidden: 32,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub accuracy: f64,
    pub frames: usize,
    pub predictions: Vec<usize>,
}

/// Linear softmax classifier applied to a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClassifier {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl FrameClassifier {
    pub fn zeros(d_full: usize, classes: usize) -> Self {
        FrameClassifier {
            w: Matrix::zeros(classes, d_full),
            b: vec![0.0; classes],
        }
    }

    pub fn scores(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut logits = self.w.matvec(frame)?;
        logits.iter_mut().zip(&self.b).for_each(|(l, b)| *l += b);
        softmax(&logits)
    }

    /// Mean of the per-frame score vectors.
    pub fn pooled_scores(&self, video: &Video, frames: &[usize]) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; self.b.len()];
        for &t in frames {
            for (m, s) in mean.iter_mut().zip(self.scores(video.frames().row(t))?) {
                *m += s / frames.len() as f64;
            }
        }
        Ok(mean)
    }

    fn accumulate(&self, frame: &[f64], label: usize, grads: &mut FrameClassifier) -> Result<f64> {
        let s = self.scores(frame)?;
        let loss = loss_classification(&s, label)?;
        for (c, p) in s.iter().enumerate() {
            let d = p - if c == label { 1.0 } else { 0.0 };
            grads.b[c] += d;
            for (g, x) in grads.w.row_mut(c).iter_mut().zip(frame) {
                *g += d * x;
            }
        }
        Ok(loss)
    }
}

impl ParamBlocks for FrameClassifier {
    fn param_blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![("w", self.w.data()), ("b", &self.b)]
    }

    fn param_blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("w", self.w.data_mut()), ("b", &mut self.b)]
    }

    fn decays(name: &str) -> bool {
        name != "b"
    }
}

/// LSTM over the sampled frames, classified from the last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier {
    pub cell: LstmCell,
    pub w_p: Matrix,
    pub b_p: Vec<f64>,
}

impl LstmClassifier {
    pub fn zeros(d_full: usize, hidden: usize, classes: usize) -> Self {
        LstmClassifier {
            cell: LstmCell::zeros(d_full, hidden),
            w_p: Matrix::zeros(classes, hidden),
            b_p: vec![0.0; classes],
        }
    }

    pub fn init(d_full: usize, hidden: usize, classes: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut m = LstmClassifier::zeros(d_full, hidden, classes);
        for v in m.cell.w.data_mut().iter_mut().chain(m.w_p.data_mut()) {
            *v = rng.uniform(-scale, scale);
        }
        m.cell.forget_bias_mut().fill(1.0);
        m
    }

    fn forward(&self, video: &Video, frames: &[usize]) -> Result<(Vec<f64>, Vec<f64>, Vec<LstmCache>)> {
        let hd = self.cell.hidden();
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut caches = Vec::with_capacity(frames.len());
        for &t in frames {
            let (h2, c2, cache) = self.cell.forward(video.frames().row(t), &h, &c)?;
            caches.push(cache);
            (h, c) = (h2, c2);
        }
        let mut logits = self.w_p.matvec(&h)?;
        logits.iter_mut().zip(&self.b_p).for_each(|(l, b)| *l += b);
        Ok((softmax(&logits)?, h, caches))
    }

    pub fn scores(&self, video: &Video, frames: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(video, frames)?.0)
    }

    fn accumulate(&self, video: &Video, frames: &[usize], grads: &mut LstmClassifier) -> Result<f64> {
        let (s, h, caches) = self.forward(video, frames)?;
        let label = video.label();
        let loss = loss_classification(&s, label)?;
        let d_logits: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(c, p)| p - if c == label { 1.0 } else { 0.0 })
            .collect();
        grads.w_p.add_outer(&d_logits, &h, 1.0)?;
        grads.b_p.iter_mut().zip(&d_logits).for_each(|(g, d)| *g += d);
        let mut d_h = self.w_p.tmatvec(&d_logits)?;
        let mut d_c = vec![0.0; self.cell.hidden()];
        for cache in caches.iter().rev() {
            let (_, dh, dc) = self.cell.backward(cache, &d_h, &d_c, &mut grads.cell)?;
            (d_h, d_c) = (dh, dc);
        }
        Ok(loss)
    }
}

impl ParamBlocks for LstmClassifier {
    fn param_blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("lstm_w", self.cell.w.data()),
            ("lstm_b", &self.cell.b),
            ("w_p", self.w_p.data()),
            ("b_p", &self.b_p),
        ]
    }

    fn param_blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("lstm_w", self.cell.w.data_mut()),
            ("lstm_b", &mut self.cell.b),
            ("w_p", self.w_p.data_mut()),
            ("b_p", &mut self.b_p),
        ]
    }

    fn decays(name: &str) -> bool {
        !matches!(name, "lstm_b" | "b_p")
    }
}

fn check_inputs(train: &[&Video], eval: &[&Video], n_frames: usize) -> Result<(usize, usize)> {
    let first = train.first().ok_or_else(|| Error::invalid("baseline needs training videos"))?;
    let classes = train.iter().chain(eval).map(|v| v.label()).max().unwrap_or(0) + 1;
    for v in train.iter().chain(eval) {
        if n_frames == 0 || n_frames > v.sequence.len() {
            return Err(Error::invalid(format!(
                "frame budget {n_frames} exceeds length {} of video {}",
                v.sequence.len(),
                v.sequence.id
            )));
        }
        if v.sequence.dim() != first.sequence.dim() {
            return Err(Error::shape("baseline", first.sequence.dim(), v.sequence.dim()));
        }
    }
    Ok((first.sequence.dim(), classes))
}

/// Frames seen by a video in a given epoch; evaluation uses `epoch = None`.
fn frames_for(video: &Video, n: usize, mode: SamplingMode, seed: u64, epoch: Option<usize>) -> Result<Vec<usize>> {
    let stream = epoch.map_or(u64::MAX, |e| e as u64);
    let mut rng = Rng::new(mix_seed(mix_seed(seed, stream), video.sequence.id as u64));
    sample_frames(video.sequence.len(), n, mode, &mut rng)
}

/// Generic minibatch SGD loop shared by both baselines.
fn fit<M, F>(model: &mut M, train: &[&Video], cfg: &BaselineConfig, zeros: impl Fn() -> M + Sync, per_video: F) -> Result<()>
where
    M: ParamBlocks + Sync + Send,
    F: Fn(&M, &Video, usize, &mut M) -> Result<f64> + Sync,
{
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        Rng::new(mix_seed(cfg.seed, epoch as u64 + 1)).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let m = &*model;
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut g = zeros();
                    per_video(m, train[i], epoch, &mut g)?;
                    Ok(g)
                })
                .collect::<Result<Vec<M>>>()?;
            let mut grads = zeros();
            for g in &parts {
                for ((_, dst), (_, src)) in grads.param_blocks_mut().into_iter().zip(g.param_blocks()) {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s / batch.len() as f64);
                }
            }
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            opt.step(model, &grads, cfg.lr);
        }
    }
    Ok(())
}

fn evaluate(eval: &[&Video], n_frames: usize, score: impl Fn(&Video) -> Result<Vec<f64>> + Sync) -> Result<BaselineResult> {
    let predictions = eval
        .par_iter()
        .map(|v| score(v).map(|s| argmax(&s)))
        .collect::<Result<Vec<_>>>()?;
    let correct = predictions.iter().zip(eval).filter(|(p, v)| **p == v.label()).count();
    Ok(BaselineResult {
        accuracy: if eval.is_empty() { 0.0 } else { correct as f64 / eval.len() as f64 },
        frames: n_frames,
        predictions,
    })
}

pub fn train_frame_classifier(
    train: &[&Video],
    n_frames: usize,
    mode: SamplingMode,
    cfg: &BaselineConfig,
) -> Result<FrameClassifier> {
    let (d_full, classes) = check_inputs(train, &[], n_frames)?;
    let mut clf = FrameClassifier::zeros(d_full, classes);
    fit(
        &mut clf,
        train,
        cfg,
        || FrameClassifier::zeros(d_full, classes),
        |m, v, epoch, g| {
            let frames = frames_for(v, n_frames, mode, cfg.seed, Some(epoch))?;
            let mut loss = 0.0;
            for &t in &frames {
                loss += m.accumulate(v.frames().row(t), v.label(), g)?;
            }
            // average over the frames of one video
            for (_, block) in g.param_blocks_mut() {
                block.iter_mut().for_each(|x| *x /= frames.len() as f64);
            }
            Ok(loss / frames.len() as f64)
        },
    )?;
    Ok(clf)
}

/// Per-frame classifier trained on `train`, scores averaged over `n_frames`
/// sampled frames of each `eval` video.
pub fn baseline_avgpool(
    train: &[&Video],
    eval: &[&Video],
    n_frames: usize,
    mode: SamplingMode,
    cfg: &BaselineConfig,
) -> Result<BaselineResult> {
    check_inputs(train, eval, n_frames)?;
    let clf = train_frame_classifier(train, n_frames, mode, cfg)?;
    evaluate(eval, n_frames, |v| {
        clf.pooled_scores(v, &frames_for(v, n_frames, mode, cfg.seed, None)?)
    })
}

pub fn train_lstm_classifier(
    train: &[&Video],
    n_frames: usize,
    mode: SamplingMode,
    cfg: &BaselineConfig,
) -> Result<LstmClassifier> {
    let (d_full, classes) = check_inputs(train, &[], n_frames)?;
    let hidden = cfg.hidden;
    let mut model = LstmClassifier::init(d_full, hidden, classes, cfg.init_scale, &mut Rng::new(cfg.seed).derive(0x157));
    fit(
        &mut model,
        train,
        cfg,
        || LstmClassifier::zeros(d_full, hidden, classes),
        |m, v, epoch, g| m.accumulate(v, &frames_for(v, n_frames, mode, cfg.seed, Some(epoch))?, g),
    )?;
    Ok(model)
}

/// Plain LSTM fed the sampled frames in temporal order, predicting from the
/// last step.
pub fn baseline_lstm(
    train: &[&Video],
    eval: &[&Video],
    n_frames: usize,
    mode: SamplingMode,
    cfg: &BaselineConfig,
) -> Result<BaselineResult> {
    check_inputs(train, eval, n_frames)?;
    let model = train_lstm_classifier(train, n_frames, mode, cfg)?;
    evaluate(eval, n_frames, |v| model.scores(v, &frames_for(v, n_frames, mode, cfg.seed, None)?))
}

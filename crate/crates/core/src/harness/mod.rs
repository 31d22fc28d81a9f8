//! Data generation, training, evaluation, μ sweeps, baselines and the CLI.

pub mod baselines;
mod cli;
mod config;

pub use baselines::{
    baseline_avgpool, baseline_lstm, sample_frames, train_frame_classifier, train_lstm_classifier, BaselineConfig,
    BaselineResult, FrameClassifier, LstmClassifier, SamplingMode,
};
pub use cli::{cli_main, run, CliError};
pub use config::{BaselineKind, RunConfig, SEED_ENV};

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::agent::{AgentParameters, StartFrame};
use crate::codec::write_atomic;
use crate::data::{Split, Video};
use crate::error::{Error, Result};
use crate::inference::{cost_of, run_adaptive, CostModel, InferenceResult, StopConfig};

pub const REPORT_HEADER: &str = "method,setting,mean_frames,accuracy,mean_gflops";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub setting: String,
    pub mean_frames: f64,
    pub accuracy: f64,
    pub mean_gflops: f64,
}

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method, self.setting, self.mean_frames, self.accuracy, self.mean_gflops
        )
    }
}

/// Accuracy-versus-cost table with `#` metadata lines above the CSV header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn with_split(split: &Split) -> Self {
        SweepReport {
            metadata: vec![
                ("split_seed".into(), split.seed.to_string()),
                ("train_videos".into(), split.train.len().to_string()),
                ("validation_videos".into(), split.validation.len().to_string()),
            ],
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

fn check_dims(params: &AgentParameters, videos: &[&Video]) -> Result<()> {
    let d = params.dims();
    for v in videos {
        if v.sequence.dim() != d.d_full || v.memory.dim() != d.d_mem || v.label() >= d.classes {
            return Err(Error::invalid(format!(
                "video {} (D_full={}, D_mem={}, label {}) does not match the model (D_full={}, D_mem={}, C={})",
                v.sequence.id,
                v.sequence.dim(),
                v.memory.dim(),
                v.label(),
                d.d_full,
                d.d_mem,
                d.classes
            )));
        }
    }
    Ok(())
}

/// Runs adaptive inference on every video, in parallel, with costs from `cost`.
pub fn evaluate_adaptive(
    params: &AgentParameters,
    videos: &[&Video],
    stop: &StopConfig,
    start: StartFrame,
    cost: &CostModel,
) -> Result<Vec<InferenceResult>> {
    check_dims(params, videos)?;
    videos
        .par_iter()
        .map(|v| {
            let mut r = run_adaptive(params, &v.sequence, &v.memory, stop, start)?;
            r.cost_gflops = cost_of(&r, cost);
            Ok(r)
        })
        .collect()
}

pub fn summarize(method: &str, setting: String, videos: &[&Video], results: &[InferenceResult]) -> SweepRow {
    let n = results.len().max(1) as f64;
    let correct = results.iter().zip(videos).filter(|(r, v)| r.prediction == v.label()).count();
    SweepRow {
        method: method.to_string(),
        setting,
        mean_frames: results.iter().map(|r| r.frames_used as f64).sum::<f64>() / n,
        accuracy: correct as f64 / n,
        mean_gflops: results.iter().map(|r| r.cost_gflops).sum::<f64>() / n,
    }
}

pub fn mu_setting(stop: &StopConfig) -> String {
    format!("mu={};p={}", stop.mu, stop.patience)
}

/// One `adaframe` row per stopping configuration.
pub fn sweep(
    params: &AgentParameters,
    videos: &[&Video],
    stops: &[StopConfig],
    start: StartFrame,
    cost: &CostModel,
) -> Result<Vec<SweepRow>> {
    if stops.is_empty() {
        return Err(Error::invalid("sweep needs at least one value of mu"));
    }
    stops
        .iter()
        .map(|stop| {
            let results = evaluate_adaptive(params, videos, stop, start, cost)?;
            Ok(summarize("adaframe", mu_setting(stop), videos, &results))
        })
        .collect()
}

pub const LOG_HEADER: &str = "video_id,stop_step,frames_used,visited,predicted,correct,cost_gflops";

/// Per-video inference log.
pub fn inference_log(videos: &[&Video], results: &[InferenceResult]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for (v, r) in videos.iter().zip(results) {
        let visited: Vec<String> = r.visited.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            v.sequence.id,
            r.stop_step,
            r.frames_used,
            visited.join(";"),
            r.prediction,
            (r.prediction == v.label()) as u8,
            r.cost_gflops
        );
    }
    out
}

/// Baseline row; cost is `frames × gflops_full_frame`.
pub fn baseline_row(method: &str, mode: SamplingMode, result: &BaselineResult, cost: &CostModel) -> SweepRow {
    SweepRow {
        method: format!("{method}_{mode}"),
        setting: format!("frames={}", result.frames),
        mean_frames: result.frames as f64,
        accuracy: result.accuracy,
        mean_gflops: cost.baseline(result.frames),
    }
}

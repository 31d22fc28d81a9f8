//! Run configuration: `key = value` lines with `#` comments, overridden by
//! command-line flags.

use std::path::PathBuf;

use crate::agent::StartFrame;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::inference::{CostModel, OverheadMode, PatienceCounting, StopConfig};
use crate::learning::{FirstStepReward, RewardKind, TrainConfig};

use super::baselines::{BaselineConfig, SamplingMode};

pub const SEED_ENV: &str = "ADAFRAME_SEED";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BaselineKind {
    #[default]
    AvgPool,
    Lstm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` until set by a file, a flag or the environment.
    pub seed: Option<u64>,
    pub synthetic: SyntheticSpec,
    pub n_videos: usize,
    pub train_fraction: f64,
    pub train: TrainConfig,
    pub mu: Vec<f64>,
    /// `None` picks the default patience for each `μ`.
    pub patience: Option<usize>,
    pub counting: PatienceCounting,
    pub cost: CostModel,
    pub exact_lstm_cost: bool,
    pub baseline: BaselineKind,
    pub baseline_frames: Vec<usize>,
    pub baseline_mode: SamplingMode,
    pub baseline_train: BaselineConfig,
    pub data: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub out: Option<PathBuf>,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub log: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            synthetic: SyntheticSpec::default(),
            n_videos: 2500,
            train_fraction: 0.8,
            train: TrainConfig::default(),
            mu: vec![f64::INFINITY],
            patience: None,
            counting: PatienceCounting::Cumulative,
            cost: CostModel::default(),
            exact_lstm_cost: false,
            baseline: BaselineKind::AvgPool,
            baseline_frames: vec![5],
            baseline_mode: SamplingMode::Uniform,
            baseline_train: BaselineConfig::default(),
            data: None,
            checkpoint: PathBuf::from("adaframe.afck"),
            out: None,
            metrics: PathBuf::from("metrics.csv"),
            report: PathBuf::from("report.csv"),
            log: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse(key, value),
    }
}

fn parse_list<T>(key: &str, value: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(key, s))
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(name, _)| *name == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("invalid value `{value}` for `{key}` (expected one of {})", names.join(", ")))
    })
}

impl RunConfig {
    /// Applies one setting. Keys use the same spelling as the long flags,
    /// with `-` and `_` interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        let syn = &mut self.synthetic;
        let tr = &mut self.train;
        let bl = &mut self.baseline_train;
        match k {
            "seed" => self.seed = Some(parse(k, value)?),
            "classes" => syn.classes = parse(k, value)?,
            "length" => syn.length = parse(k, value)?,
            "d_full" => syn.d_full = parse(k, value)?,
            "d_mem" => syn.d_mem = parse(k, value)?,
            "t_d" => syn.t_d = parse(k, value)?,
            "signal_window" => syn.signal_window = parse(k, value)?,
            "signal_strength" => syn.signal_strength = parse(k, value)?,
            "shared_signal" => syn.shared_signal = parse(k, value)?,
            "noise_stddev" => syn.noise_stddev = parse(k, value)?,
            "memory_gain" => syn.memory_gain = parse(k, value)?,
            "memory_noise" => syn.memory_noise = parse(k, value)?,
            "n_videos" => self.n_videos = parse(k, value)?,
            "train_fraction" => self.train_fraction = parse(k, value)?,
            "k" | "horizon" => tr.horizon = parse(k, value)?,
            "gamma" => tr.gamma = parse(k, value)?,
            "sigma" => tr.sigma = parse(k, value)?,
            "lambda" => tr.lambda = parse(k, value)?,
            "lr" => tr.lr = parse(k, value)?,
            "momentum" => tr.momentum = parse(k, value)?,
            "weight_decay" => tr.weight_decay = parse(k, value)?,
            "epochs" => tr.epochs = parse(k, value)?,
            "batch_size" => tr.batch_size = parse(k, value)?,
            "lr_decay_every" => tr.lr_decay_every = parse(k, value)?,
            "lr_decay_factor" => tr.lr_decay_factor = parse(k, value)?,
            "clip_norm" => tr.clip_norm = if value == "none" { None } else { Some(parse(k, value)?) },
            "hidden" => tr.hidden = parse(k, value)?,
            "init_scale" => tr.init_scale = parse(k, value)?,
            "reward" => {
                tr.reward.kind = choice(
                    k,
                    value,
                    &[
                        ("margin", RewardKind::MarginIncrease),
                        ("prediction", RewardKind::Prediction),
                        ("transition", RewardKind::PredictionTransition),
                    ],
                )?
            }
            "first_step_reward" => {
                tr.reward.first_step = choice(
                    k,
                    value,
                    &[("zero_floor", FirstStepReward::ZeroFloor), ("none", FirstStepReward::None)],
                )?
            }
            "start" => tr.start = choice(k, value, &[("first", StartFrame::First), ("middle", StartFrame::Middle)])?,
            "mu" => self.mu = parse_list(k, value, parse_f64)?,
            "patience" => self.patience = if value == "auto" { None } else { Some(parse(k, value)?) },
            "counting" => {
                self.counting = choice(
                    k,
                    value,
                    &[("cumulative", PatienceCounting::Cumulative), ("consecutive", PatienceCounting::Consecutive)],
                )?
            }
            "overhead" => {
                self.cost.overhead_mode = choice(
                    k,
                    value,
                    &[("per_frame", OverheadMode::PerFrame), ("one_time", OverheadMode::OneTime)],
                )?
            }
            "gflops_full_frame" => self.cost.gflops_full_frame = parse(k, value)?,
            "gflops_overhead" => self.cost.gflops_adaframe_overhead_per_frame = parse(k, value)?,
            "exact_lstm_cost" => self.exact_lstm_cost = parse_bool(k, value)?,
            "baseline" => self.baseline = choice(k, value, &[("avgpool", BaselineKind::AvgPool), ("lstm", BaselineKind::Lstm)])?,
            "frames" => self.baseline_frames = parse_list(k, value, |k, v| parse(k, v))?,
            "mode" => self.baseline_mode = value.parse()?,
            "baseline_epochs" => bl.epochs = parse(k, value)?,
            "baseline_lr" => bl.lr = parse(k, value)?,
            "baseline_hidden" => bl.hidden = parse(k, value)?,
            "baseline_batch_size" => bl.batch_size = parse(k, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "out" => self.out = Some(PathBuf::from(value)),
            "metrics" => self.metrics = PathBuf::from(value),
            "report" => self.report = PathBuf::from(value),
            "log" => self.log = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Seed from the config, else `ADAFRAME_SEED`, else 0.
    pub fn resolve_seed(&mut self) -> Result<u64> {
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => parse(SEED_ENV, &v)?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        self.synthetic.seed = seed;
        self.train.seed = seed;
        self.baseline_train.seed = seed;
        Ok(seed)
    }

    pub fn stop_configs(&self, horizon: usize) -> Result<Vec<StopConfig>> {
        self.mu
            .iter()
            .map(|&mu| {
                let mut stop = match self.patience {
                    Some(p) => StopConfig::new(mu, p, horizon)?,
                    None => StopConfig::with_default_patience(mu, horizon)?,
                };
                stop.counting = self.counting;
                Ok(stop)
            })
            .collect()
    }

    pub fn data_path(&self) -> Result<&PathBuf> {
        self.data.as_ref().ok_or_else(|| Error::Config("no dataset given (use --data)".into()))
    }
}

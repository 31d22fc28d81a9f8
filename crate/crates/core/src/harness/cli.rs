use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::agent::{Checkpoint, Dims};
use crate::codec::write_atomic;
use crate::data::{generate, read_dataset, write_dataset, Dataset, Video};
use crate::error::{Error, Result};
use crate::learning::{metrics_csv, Trainer};

use super::config::{BaselineKind, RunConfig};
use super::{
    baseline_avgpool, baseline_lstm, baseline_row, evaluate_adaptive, inference_log, mu_setting, summarize, sweep,
    SweepReport,
};

#[derive(Parser, Debug)]
#[command(name = "adaframe", version, about = "Adaptive frame selection: data, training, evaluation and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data, split, initialization and sampling (default: $ADAFRAME_SEED, else 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Override any configuration key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_videos: Option<usize>,
    },
    /// Train the agent on the training split
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Evaluate a checkpoint on the validation split at one value of mu
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stop margin (default: inf, i.e. always K steps)
        #[arg(long)]
        mu: Option<String>,
        #[arg(long)]
        patience: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-video inference log
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a grid of mu values
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated grid, e.g. 0.1,0.3,inf
        #[arg(long)]
        mu: Option<String>,
        #[arg(long)]
        patience: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate a fixed-budget baseline
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// avgpool or lstm
        #[arg(long)]
        baseline: Option<String>,
        /// Comma-separated frame budgets
        #[arg(long)]
        frames: Option<String>,
        /// uniform or random
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn new() -> Self {
        Overrides(Vec::new())
    }

    fn add<T: ToString>(&mut self, key: &'static str, value: &Option<T>) {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
    }

    fn path(&mut self, key: &'static str, value: &Option<PathBuf>) {
        if let Some(v) = value {
            self.0.push((key, v.to_string_lossy().into_owned()));
        }
    }
}

fn build_config(common: &Common, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(k, v)?;
    }
    for (k, v) in overrides.0 {
        cfg.set(k, &v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    cfg.resolve_seed()?;
    Ok(cfg)
}

fn require(path: &std::path::Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    require(&cfg.checkpoint, "checkpoint")?;
    Checkpoint::load(&cfg.checkpoint)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.data_path()?;
    require(path, "dataset")?;
    let ds = read_dataset(path)?;
    if ds.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    Ok(ds)
}

fn seed_of(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or(0)
}

/// Runs one command and returns a short summary for standard output.
pub fn run<I, T>(args: I) -> std::result::Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    execute(cli.command).map_err(CliError::Runtime)
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Runtime(Error),
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::GenData { common, out, n_videos } => {
            let mut o = Overrides::new();
            o.path("out", &out);
            o.add("n_videos", &n_videos);
            let cfg = build_config(&common, o)?;
            let path = cfg.out.clone().ok_or_else(|| Error::Config("gen-data needs --out".into()))?;
            let ds = generate(&cfg.synthetic, cfg.n_videos)?;
            write_dataset(&path, &ds)?;
            Ok(format!("wrote {} videos to {}", ds.len(), path.display()))
        }
        Command::Train {
            common,
            data,
            checkpoint,
            metrics,
            k,
            epochs,
            lr,
            hidden,
        } => {
            let mut o = Overrides::new();
            o.path("data", &data);
            o.path("checkpoint", &checkpoint);
            o.path("metrics", &metrics);
            o.add("k", &k);
            o.add("epochs", &epochs);
            o.add("lr", &lr);
            o.add("hidden", &hidden);
            let cfg = build_config(&common, o)?;
            let ds = load_data(&cfg)?;
            let (d_full, d_mem) = ds.dims().ok_or_else(|| Error::invalid("dataset is empty"))?;
            let split = ds.split(seed_of(&cfg), cfg.train_fraction);
            let train = ds.select(&split.train);
            let dims = Dims {
                d_full,
                d_mem,
                hidden: cfg.train.hidden,
                classes: ds.classes,
            };
            let mut trainer = Trainer::new(dims, cfg.train.clone())?;
            let mut rows = Vec::new();
            for _ in 0..cfg.train.epochs {
                let m = trainer.train_epoch(&train)?;
                eprintln!(
                    "epoch {:>4}  lr {:.2e}  cls {:.4}  utl {:.4}  J {:.4}  acc {:.3}",
                    m.epoch, m.lr, m.loss_cls, m.loss_utl, m.j_sel, m.train_accuracy
                );
                rows.push(m);
            }
            let ckpt = Checkpoint {
                params: trainer.params,
                horizon: cfg.train.horizon,
            };
            ckpt.save(&cfg.checkpoint)?;
            write_atomic(&cfg.metrics, metrics_csv(&rows).as_bytes())?;
            Ok(format!(
                "trained {} epochs on {} videos; checkpoint {}, metrics {}",
                rows.len(),
                train.len(),
                cfg.checkpoint.display(),
                cfg.metrics.display()
            ))
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            mu,
            patience,
            k,
            report,
            log,
        } => {
            let mut o = Overrides::new();
            o.path("data", &data);
            o.path("checkpoint", &checkpoint);
            o.add("mu", &mu);
            o.add("patience", &patience);
            o.path("report", &report);
            o.path("log", &log);
            let cfg = build_config(&common, o)?;
            let (ckpt, ds) = (load_checkpoint(&cfg)?, load_data(&cfg)?);
            let split = ds.split(seed_of(&cfg), cfg.train_fraction);
            let videos = ds.select(&split.validation);
            let horizon = k.unwrap_or(ckpt.horizon);
            let stop = cfg.stop_configs(horizon)?[0];
            let cost = cost_model(&cfg, &ckpt);
            let results = evaluate_adaptive(&ckpt.params, &videos, &stop, cfg.train.start, &cost)?;
            let mut rep = SweepReport::with_split(&split);
            rep.rows.push(summarize("adaframe", mu_setting(&stop), &videos, &results));
            rep.write(&cfg.report)?;
            if let Some(path) = &cfg.log {
                write_atomic(path, inference_log(&videos, &results).as_bytes())?;
            }
            let row = &rep.rows[0];
            Ok(format!(
                "accuracy {:.4}  mean frames {:.3}  mean GFLOPs {:.3}",
                row.accuracy, row.mean_frames, row.mean_gflops
            ))
        }
        Command::Sweep {
            common,
            data,
            checkpoint,
            mu,
            patience,
            k,
            report,
        } => {
            let mut o = Overrides::new();
            o.path("data", &data);
            o.path("checkpoint", &checkpoint);
            o.add("mu", &mu);
            o.add("patience", &patience);
            o.path("report", &report);
            let cfg = build_config(&common, o)?;
            let (ckpt, ds) = (load_checkpoint(&cfg)?, load_data(&cfg)?);
            let split = ds.split(seed_of(&cfg), cfg.train_fraction);
            let videos = ds.select(&split.validation);
            let stops = cfg.stop_configs(k.unwrap_or(ckpt.horizon))?;
            let cost = cost_model(&cfg, &ckpt);
            let mut rep = SweepReport::with_split(&split);
            rep.rows = sweep(&ckpt.params, &videos, &stops, cfg.train.start, &cost)?;
            rep.write(&cfg.report)?;
            Ok(format!("wrote {} rows to {}", rep.rows.len(), cfg.report.display()))
        }
        Command::Baseline {
            common,
            data,
            baseline,
            frames,
            mode,
            epochs,
            report,
        } => {
            let mut o = Overrides::new();
            o.path("data", &data);
            o.add("baseline", &baseline);
            o.add("frames", &frames);
            o.add("mode", &mode);
            o.add("baseline_epochs", &epochs);
            o.path("report", &report);
            let cfg = build_config(&common, o)?;
            let ds = load_data(&cfg)?;
            let split = ds.split(seed_of(&cfg), cfg.train_fraction);
            let (train, eval): (Vec<&Video>, Vec<&Video>) = (ds.select(&split.train), ds.select(&split.validation));
            let mut rep = SweepReport::with_split(&split);
            for &n in &cfg.baseline_frames {
                let (name, result) = match cfg.baseline {
                    BaselineKind::AvgPool => (
                        "avgpool",
                        baseline_avgpool(&train, &eval, n, cfg.baseline_mode, &cfg.baseline_train)?,
                    ),
                    BaselineKind::Lstm => (
                        "lstm",
                        baseline_lstm(&train, &eval, n, cfg.baseline_mode, &cfg.baseline_train)?,
                    ),
                };
                rep.rows.push(baseline_row(name, cfg.baseline_mode, &result, &cfg.cost));
            }
            rep.write(&cfg.report)?;
            Ok(format!("wrote {} rows to {}", rep.rows.len(), cfg.report.display()))
        }
    }
}

fn cost_model(cfg: &RunConfig, ckpt: &Checkpoint) -> crate::inference::CostModel {
    if cfg.exact_lstm_cost {
        cfg.cost.with_exact_lstm(&ckpt.params)
    } else {
        cfg.cost
    }
}

/// Entry point for the binary: 0 on success, 1 on usage errors, 2 on runtime
/// errors.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(CliError::Usage(e)) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

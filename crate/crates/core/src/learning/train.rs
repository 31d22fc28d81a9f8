use std::fmt::Write as _;

use rayon::prelude::*;

use crate::agent::{backward, init_params, rollout, AgentParameters, Dims, LocationPolicy, StartFrame};
use crate::data::Video;
use crate::error::{Error, Result};
use crate::numerics::{mix_seed, Rng};

use super::losses::{head_grads, LossBreakdown, LossWeights, Trajectory};
use super::optim::{clip_global_norm, step_decay_lr, Sgd};
use super::rewards::RewardConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Steps per training rollout, `K`.
    pub horizon: usize,
    pub gamma: f64,
    /// Stddev of the Gaussian location policy.
    pub sigma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub clip_norm: Option<f64>,
    pub hidden: usize,
    pub init_scale: f64,
    pub reward: RewardConfig,
    pub start: StartFrame,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon: 5,
            gamma: 0.9,
            sigma: 0.1,
            lambda: 1.0,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 32,
            lr_decay_every: 40,
            lr_decay_factor: 0.1,
            clip_norm: Some(5.0),
            hidden: 32,
            init_scale: 0.1,
            reward: RewardConfig::default(),
            start: StartFrame::First,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("training horizon must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("discount must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("policy stddev must be positive, got {}", self.sigma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("loss weight must be non-negative, got {}", self.lambda)));
        }
        if !(self.lr >= 0.0) || self.batch_size == 0 {
            return Err(Error::invalid("learning rate must be non-negative and batch size positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_decay_lr(self.lr, epoch, self.lr_decay_every, self.lr_decay_factor)
    }
}

/// Averages over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss_cls: f64,
    pub loss_utl: f64,
    /// Mean undiscounted return per rollout, the Monte-Carlo estimate of `J_sel`.
    pub j_sel: f64,
    /// Mean per-step reward.
    pub mean_reward: f64,
    pub train_accuracy: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,loss_cls,loss_utl,J_sel_estimate,mean_reward,train_accuracy";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.loss_cls, self.loss_utl, self.j_sel, self.mean_reward, self.train_accuracy
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

struct VideoResult {
    grads: AgentParameters,
    losses: LossBreakdown,
    total_reward: f64,
    steps: usize,
    correct: bool,
}

/// Gradient of the combined objective for one sampled rollout.
pub fn video_gradient(
    params: &AgentParameters,
    video: &Video,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(AgentParameters, Trajectory, LossBreakdown)> {
    let sampled = rollout(
        params,
        video.frames(),
        &video.memory,
        config.horizon,
        config.start,
        LocationPolicy::Sample {
            stddev: config.sigma,
            rng,
        },
        true,
    )?;
    let traj = Trajectory::from_rollout(&sampled, video.label(), config.reward, config.gamma)?;
    let losses = super::losses::losses_against(&sampled, &traj, config.sigma)?;
    let heads = head_grads(&traj, config.sigma, LossWeights::combined(config.lambda))?;
    let grads = backward(params, &sampled, &heads)?;
    Ok((grads, traj, losses))
}

/// Training state: parameters, optimizer and epoch counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: AgentParameters,
    pub config: TrainConfig,
    optimizer: Sgd,
    epoch: usize,
}

impl Trainer {
    pub fn new(dims: Dims, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dims = Dims {
            hidden: config.hidden,
            ..dims
        };
        let params = init_params(dims, config.init_scale, &mut Rng::new(config.seed).derive(INIT_STREAM))?;
        Trainer::from_params(params, config)
    }

    pub fn from_params(params: AgentParameters, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Sgd::new(config.momentum, config.weight_decay)?;
        Ok(Trainer {
            params,
            config,
            optimizer,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `videos` in a seeded shuffled order.
    pub fn train_epoch(&mut self, videos: &[&Video]) -> Result<EpochMetrics> {
        if videos.is_empty() {
            return Err(Error::invalid("cannot train on an empty dataset"));
        }
        let cfg = &self.config;
        let epoch_seed = mix_seed(cfg.seed, self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..videos.len()).collect();
        Rng::new(epoch_seed).shuffle(&mut order);
        let lr = cfg.lr_at(self.epoch);

        let mut sums = LossBreakdown::default();
        let (mut reward_sum, mut step_count, mut return_sum, mut correct) = (0.0, 0usize, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let params = &self.params;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = Rng::new(mix_seed(epoch_seed, i as u64));
                    let (grads, traj, losses) = video_gradient(params, videos[i], cfg, &mut rng)?;
                    Ok(VideoResult {
                        grads,
                        losses,
                        total_reward: traj.total_reward(),
                        steps: traj.len(),
                        correct: traj.prediction() == traj.label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;

            // fixed-order reduction keeps training bit-reproducible
            let mut grads = params.zeros_like();
            for r in &results {
                let total = r.losses.total(LossWeights::combined(cfg.lambda));
                if !total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss {total} at epoch {} (cls {}, utl {}, sel {})",
                        self.epoch, r.losses.classification, r.losses.utility, r.losses.surrogate
                    )));
                }
                grads.add_scaled(&r.grads, 1.0);
                sums.classification += r.losses.classification;
                sums.utility += r.losses.utility;
                return_sum += r.total_reward;
                reward_sum += r.total_reward;
                step_count += r.steps;
                correct += r.correct as usize;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {}", self.epoch)));
            }
            self.optimizer.step(&mut self.params, &grads, lr);
        }

        let n = videos.len() as f64;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            lr,
            loss_cls: sums.classification / n,
            loss_utl: sums.utility / n,
            j_sel: return_sum / n,
            mean_reward: reward_sum / step_count as f64,
            train_accuracy: correct as f64 / n,
        };
        self.epoch += 1;
        Ok(metrics)
    }

    pub fn fit(&mut self, videos: &[&Video]) -> Result<Vec<EpochMetrics>> {
        (0..self.config.epochs).map(|_| self.train_epoch(videos)).collect()
    }
}

const INIT_STREAM: u64 = 0x1417;

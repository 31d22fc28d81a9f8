//! Trajectories and the three training losses: cross-entropy at the last
//! step, value regression, and the REINFORCE surrogate with `V̂_t` as baseline.

use std::f64::consts::PI;

use crate::agent::{HeadGrads, Rollout};
use crate::error::{Error, Result};

use super::rewards::{discounted_returns, margin, rewards_for, RewardConfig};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// One rollout with everything needed by the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: usize,
    pub frames: Vec<usize>,
    /// `ℓ_{t+1}`, drawn after step `t` (unclamped).
    pub locations: Vec<f64>,
    /// `a_t`.
    pub location_means: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
    pub margins: Vec<f64>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    /// `V̂_t`.
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn from_rollout(rollout: &Rollout, label: usize, reward: RewardConfig, gamma: f64) -> Result<Self> {
        if rollout.is_empty() {
            return Err(Error::invalid("trajectory needs at least one step"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("discount must lie in (0, 1], got {gamma}")));
        }
        let scores: Vec<Vec<f64>> = rollout.steps.iter().map(|s| s.output.scores.clone()).collect();
        let margins = scores.iter().map(|s| margin(s, label)).collect::<Result<Vec<_>>>()?;
        let rewards = rewards_for(&scores, label, reward)?;
        let returns = discounted_returns(&rewards, gamma);
        Ok(Trajectory {
            label,
            frames: rollout.visited(),
            locations: rollout.locations(),
            location_means: rollout.steps.iter().map(|s| s.output.location_mean).collect(),
            values: rollout.steps.iter().map(|s| s.output.utility).collect(),
            scores,
            margins,
            rewards,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn final_scores(&self) -> &[f64] {
        self.scores.last().expect("non-empty trajectory")
    }

    pub fn prediction(&self) -> usize {
        argmax(self.final_scores())
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// `−log s^{gt}`, with `s^{gt}` floored at [`PROB_FLOOR`].
pub fn loss_classification(scores: &[f64], gt: usize) -> Result<f64> {
    let p = scores
        .get(gt)
        .ok_or_else(|| Error::invalid(format!("label {gt} out of range for {} classes", scores.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `½ (V̂ − R)²`
pub fn loss_utility(value: f64, target: f64) -> f64 {
    0.5 * (value - target).powi(2)
}

/// Log density of `N(mean, σ²)` at `x`.
pub fn gaussian_log_prob(x: f64, mean: f64, sigma: f64) -> f64 {
    -0.5 * ((x - mean) / sigma).powi(2) - (sigma * (2.0 * PI).sqrt()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyTerm {
    /// `R_t − V̂_t`, held constant during differentiation.
    pub advantage: f64,
    /// `∂ log π(ℓ_{t+1} | a_t) / ∂a_t = (ℓ_{t+1} − a_t) / σ²`.
    pub score: f64,
}

impl PolicyTerm {
    /// Gradient of the surrogate loss `−A · log π` with respect to `a_t`.
    pub fn d_location_mean(&self) -> f64 {
        -self.advantage * self.score
    }
}

pub fn policy_gradient_terms(traj: &Trajectory, sigma: f64) -> Result<Vec<PolicyTerm>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("policy stddev must be positive, got {sigma}")));
    }
    let var = sigma * sigma;
    Ok((0..traj.len())
        .map(|t| PolicyTerm {
            advantage: traj.returns[t] - traj.values[t],
            score: (traj.locations[t] - traj.location_means[t]) / var,
        })
        .collect())
}

/// Weights of the three loss terms; training uses `(1, λ, λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub classification: f64,
    pub utility: f64,
    pub selection: f64,
}

impl LossWeights {
    pub fn combined(lambda: f64) -> Self {
        LossWeights {
            classification: 1.0,
            utility: lambda,
            selection: lambda,
        }
    }

    pub const CLASSIFICATION: LossWeights = LossWeights {
        classification: 1.0,
        utility: 0.0,
        selection: 0.0,
    };
    pub const UTILITY: LossWeights = LossWeights {
        classification: 0.0,
        utility: 1.0,
        selection: 0.0,
    };
    pub const SELECTION: LossWeights = LossWeights {
        classification: 0.0,
        utility: 0.0,
        selection: 1.0,
    };
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub classification: f64,
    pub utility: f64,
    /// Policy surrogate `−Σ_t (R_t − V̂_t) log π(ℓ_{t+1} | a_t)`.
    pub surrogate: f64,
}

impl LossBreakdown {
    pub fn total(&self, w: LossWeights) -> f64 {
        w.classification * self.classification + w.utility * self.utility + w.selection * self.surrogate
    }
}

/// Loss values of a rollout measured against a frozen trajectory: targets
/// `R_t`, advantages and sampled locations come from `frozen`, everything
/// differentiable comes from `rollout`.
pub fn losses_against(rollout: &Rollout, frozen: &Trajectory, sigma: f64) -> Result<LossBreakdown> {
    if rollout.len() != frozen.len() {
        return Err(Error::shape("losses_against", frozen.len(), rollout.len()));
    }
    let terms = policy_gradient_terms(frozen, sigma)?;
    let last = rollout.last_output().expect("non-empty rollout");
    let mut out = LossBreakdown {
        classification: loss_classification(&last.scores, frozen.label)?,
        ..Default::default()
    };
    for (t, step) in rollout.steps.iter().enumerate() {
        out.utility += loss_utility(step.output.utility, frozen.returns[t]);
        out.surrogate -= terms[t].advantage * gaussian_log_prob(frozen.locations[t], step.output.location_mean, sigma);
    }
    Ok(out)
}

/// Per-step head gradients of the weighted objective for one trajectory.
pub fn head_grads(traj: &Trajectory, sigma: f64, weights: LossWeights) -> Result<Vec<HeadGrads>> {
    let terms = policy_gradient_terms(traj, sigma)?;
    let last = traj.len() - 1;
    Ok((0..traj.len())
        .map(|t| {
            let d_logits = (t == last && weights.classification != 0.0).then(|| {
                let mut d = traj.scores[t].clone();
                d[traj.label] -= 1.0;
                d.iter_mut().for_each(|v| *v *= weights.classification);
                d
            });
            HeadGrads {
                d_logits,
                d_location_mean: weights.selection * terms[t].d_location_mean(),
                d_utility: weights.utility * (traj.values[t] - traj.returns[t]),
            }
        })
        .collect())
}

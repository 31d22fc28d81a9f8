//! Rewards, returns, the three training losses and the optimizer.

mod losses;
mod optim;
mod rewards;
mod train;

pub use losses::{
    argmax, gaussian_log_prob, head_grads, loss_classification, loss_utility, losses_against, policy_gradient_terms,
    LossBreakdown, LossWeights, PolicyTerm, Trajectory, PROB_FLOOR,
};
pub use optim::{clip_global_norm, global_norm, step_decay_lr, ParamBlocks, Sgd};
pub use rewards::{
    discounted_returns, margin, margin_increase_rewards, reward_margin_increase, reward_margin_increase_with,
    reward_prediction, reward_prediction_transition, rewards_for, FirstStepReward, RewardConfig, RewardKind,
};
pub use train::{metrics_csv, video_gradient, EpochMetrics, TrainConfig, Trainer, METRICS_HEADER};

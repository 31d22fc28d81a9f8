use crate::error::{Error, Result};

/// Reward signal used to score each observed frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RewardKind {
    /// Positive part of the margin's gain over its running max.
    #[default]
    MarginIncrease,
    /// Ground-truth probability `p_t^{gt}`.
    Prediction,
    /// `p_t^{gt} − p_{t−1}^{gt}` with `p_0^{gt} = 0`.
    PredictionTransition,
}

/// What the margin-increase reward compares the first margin against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FirstStepReward {
    /// Running max starts at 0, so `r_1 = max(0, m_1)`.
    #[default]
    ZeroFloor,
    /// `r_1 = 0`.
    None,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub first_step: FirstStepReward,
}

fn check_label(scores: &[f64], gt: usize) -> Result<()> {
    if gt >= scores.len() {
        return Err(Error::invalid(format!(
            "label {gt} out of range for {} classes",
            scores.len()
        )));
    }
    Ok(())
}

/// `s^{gt} − max_{c≠gt} s^c`.
pub fn margin(scores: &[f64], gt: usize) -> Result<f64> {
    check_label(scores, gt)?;
    if scores.len() < 2 {
        return Err(Error::invalid("margin needs at least two classes"));
    }
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != gt)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(scores[gt] - best_other)
}

/// Reward for the latest margin in `margins` (`m_1..m_t`).
pub fn reward_margin_increase(margins: &[f64]) -> Result<f64> {
    reward_margin_increase_with(margins, FirstStepReward::ZeroFloor)
}

pub fn reward_margin_increase_with(margins: &[f64], first: FirstStepReward) -> Result<f64> {
    let (&current, history) = margins
        .split_last()
        .ok_or_else(|| Error::invalid("empty margin history"))?;
    if history.is_empty() && first == FirstStepReward::None {
        return Ok(0.0);
    }
    let best = history.iter().copied().fold(0.0f64, f64::max);
    Ok((current - best).max(0.0))
}

/// All margin-increase rewards of a sequence in one pass.
pub fn margin_increase_rewards(margins: &[f64], first: FirstStepReward) -> Vec<f64> {
    let mut best = 0.0f64;
    margins
        .iter()
        .enumerate()
        .map(|(t, &m)| {
            let r = if t == 0 && first == FirstStepReward::None {
                0.0
            } else {
                (m - best).max(0.0)
            };
            best = best.max(m);
            r
        })
        .collect()
}

pub fn reward_prediction(scores: &[f64], gt: usize) -> Result<f64> {
    check_label(scores, gt)?;
    Ok(scores[gt])
}

pub fn reward_prediction_transition(scores: &[f64], previous: Option<&[f64]>, gt: usize) -> Result<f64> {
    check_label(scores, gt)?;
    let prev = match previous {
        Some(p) => {
            check_label(p, gt)?;
            p[gt]
        }
        None => 0.0,
    };
    Ok(scores[gt] - prev)
}

/// Per-step rewards for the class distributions of one rollout.
pub fn rewards_for(scores: &[Vec<f64>], gt: usize, config: RewardConfig) -> Result<Vec<f64>> {
    match config.kind {
        RewardKind::MarginIncrease => {
            let margins = scores.iter().map(|s| margin(s, gt)).collect::<Result<Vec<_>>>()?;
            Ok(margin_increase_rewards(&margins, config.first_step))
        }
        RewardKind::Prediction => scores.iter().map(|s| reward_prediction(s, gt)).collect(),
        RewardKind::PredictionTransition => scores
            .iter()
            .enumerate()
            .map(|(t, s)| reward_prediction_transition(s, t.checked_sub(1).map(|p| scores[p].as_slice()), gt))
            .collect(),
    }
}

/// `R_t = Σ_{i≥0} γ^i r_{t+i}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn margins() {
        assert!((margin(&[0.5, 0.3, 0.2], 0).unwrap() - 0.2).abs() < 1e-15);
        assert!((margin(&[0.2, 0.8], 0).unwrap() + 0.6).abs() < 1e-15);
        for gt in 0..4 {
            assert_eq!(margin(&[0.25; 4], gt).unwrap(), 0.0);
        }
        assert!(margin(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn margin_increase_examples() {
        let r = margin_increase_rewards(&[0.2, 0.5, 0.3], FirstStepReward::ZeroFloor);
        assert!(close(&r, &[0.2, 0.3, 0.0]));
        let r = margin_increase_rewards(&[0.4, 0.4, 0.1], FirstStepReward::ZeroFloor);
        assert!(close(&r, &[0.4, 0.0, 0.0]));
        let r = margin_increase_rewards(&[-0.4, -0.1, -0.9], FirstStepReward::ZeroFloor);
        assert_eq!(r, vec![0.0; 3]);
        let r = margin_increase_rewards(&[0.2, 0.5, 0.3], FirstStepReward::None);
        assert!(close(&r, &[0.0, 0.3, 0.0]));
        assert!(reward_margin_increase(&[]).is_err());
        assert!((reward_margin_increase(&[0.2, 0.5]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn prediction_rewards() {
        assert_eq!(reward_prediction(&[0.7, 0.3], 0).unwrap(), 0.7);
        assert_eq!(reward_prediction_transition(&[0.4, 0.6], Some(&[0.4, 0.6]), 1).unwrap(), 0.0);
        assert!((reward_prediction_transition(&[0.6, 0.4], Some(&[0.2, 0.8]), 0).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(reward_prediction_transition(&[0.6, 0.4], None, 0).unwrap(), 0.6);
        assert!(reward_prediction(&[0.6, 0.4], 5).is_err());

        let scores = vec![vec![0.2, 0.8], vec![0.6, 0.4]];
        let cfg = RewardConfig {
            kind: RewardKind::PredictionTransition,
            ..Default::default()
        };
        assert!(close(&rewards_for(&scores, 0, cfg).unwrap(), &[0.2, 0.4]));
    }

    #[test]
    fn returns_examples() {
        assert!(close(&discounted_returns(&[1.0, 0.0, 1.0], 0.9), &[1.81, 0.9, 1.0]));
        assert!(close(&discounted_returns(&[1.0; 4], 1.0), &[4.0, 3.0, 2.0, 1.0]));
        assert_eq!(discounted_returns(&[0.0; 5], 0.9), vec![0.0; 5]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn returns_satisfy_recursion(rs in proptest::collection::vec(-2.0f64..2.0, 1..30), gamma in 0.01f64..=1.0) {
                let big_r = discounted_returns(&rs, gamma);
                for t in 0..rs.len() {
                    let next = big_r.get(t + 1).copied().unwrap_or(0.0);
                    prop_assert!((big_r[t] - (rs[t] + gamma * next)).abs() < 1e-12);
                }
            }

            #[test]
            fn margin_rewards_telescope(ms in proptest::collection::vec(-1.0f64..=1.0, 1..40)) {
                let r = margin_increase_rewards(&ms, FirstStepReward::ZeroFloor);
                prop_assert!(r.iter().all(|v| *v >= 0.0));
                let peak = ms.iter().copied().fold(0.0f64, f64::max);
                prop_assert!((r.iter().sum::<f64>() - peak).abs() < 1e-12);
            }
        }
    }
}

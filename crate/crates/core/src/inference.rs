//! Test-time rollouts: fixed-length, utility-driven early stopping, an
//! entropy stopping baseline, and GFLOPs accounting.

use crate::agent::{location_to_index, step, AgentParameters, AgentState, StartFrame};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::learning::argmax;
use crate::memory::GlobalMemory;

/// How utility drops are counted against the patience budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PatienceCounting {
    /// Every violating step counts, whenever it happens.
    #[default]
    Cumulative,
    /// Only an unbroken run of violating steps counts.
    Consecutive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopConfig {
    /// Margin `μ` by which the utility must fall below its running max.
    pub mu: f64,
    /// Number of violations `p` that triggers a stop.
    pub patience: usize,
    /// Maximum number of steps `K`.
    pub horizon: usize,
    pub counting: PatienceCounting,
}

impl StopConfig {
    pub fn new(mu: f64, patience: usize, horizon: usize) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::invalid(format!("stop margin must be non-negative, got {mu}")));
        }
        if patience == 0 || horizon == 0 {
            return Err(Error::invalid("patience and horizon must be at least 1"));
        }
        Ok(StopConfig {
            mu,
            patience,
            horizon,
            counting: PatienceCounting::Cumulative,
        })
    }

    /// Patience 2 below `μ = 0.7`, otherwise `⌊K/2⌋ + 1`.
    pub fn default_patience(mu: f64, horizon: usize) -> usize {
        if mu < 0.7 {
            2
        } else {
            horizon / 2 + 1
        }
    }

    pub fn with_default_patience(mu: f64, horizon: usize) -> Result<Self> {
        StopConfig::new(mu, StopConfig::default_patience(mu, horizon), horizon)
    }

    /// Never stops before the horizon.
    pub fn fixed(horizon: usize) -> Result<Self> {
        StopConfig::new(f64::INFINITY, 1, horizon)
    }

    pub fn monitor(&self) -> StopMonitor {
        StopMonitor {
            config: *self,
            running_max: None,
            violations: 0,
        }
    }
}

/// Incremental form of the stopping rule.
#[derive(Debug, Clone)]
pub struct StopMonitor {
    config: StopConfig,
    running_max: Option<f64>,
    violations: usize,
}

impl StopMonitor {
    /// Feeds `V̂_t`; returns true when inference should stop at this step.
    /// The running max is compared first and updated afterwards.
    pub fn observe(&mut self, utility: f64) -> bool {
        let violated = self.running_max.is_some_and(|max| max - utility > self.config.mu);
        match (violated, self.config.counting) {
            (true, _) => self.violations += 1,
            (false, PatienceCounting::Consecutive) => self.violations = 0,
            (false, PatienceCounting::Cumulative) => {}
        }
        self.running_max = Some(self.running_max.map_or(utility, |m| m.max(utility)));
        self.violations >= self.config.patience
    }

    pub fn violations(&self) -> usize {
        self.violations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub prediction: usize,
    pub scores: Vec<f64>,
    pub frames_used: usize,
    pub stop_step: usize,
    pub visited: Vec<usize>,
    pub utilities: Vec<f64>,
    pub cost_gflops: f64,
}

/// Deterministic rollout (`ℓ = a_t`) that stops once the utility has fallen
/// more than `μ` below its running max `p` times, or at the horizon.
pub fn run_adaptive(
    params: &AgentParameters,
    sequence: &FeatureSequence,
    memory: &GlobalMemory,
    stop: &StopConfig,
    start: StartFrame,
) -> Result<InferenceResult> {
    if sequence.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    let total = sequence.len();
    let mut monitor = stop.monitor();
    let mut state = AgentState::initial(params.dims());
    let mut frame = start.index(total);
    let mut visited = Vec::new();
    let mut utilities = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..stop.horizon {
        visited.push(frame);
        let (next, out, _) = step(params, &state, sequence.features.row(frame), memory)?;
        utilities.push(out.utility);
        scores = out.scores;
        if monitor.observe(out.utility) {
            break;
        }
        frame = location_to_index(out.location_mean, total);
        state = next;
    }
    let frames_used = visited.len();
    Ok(InferenceResult {
        prediction: argmax(&scores),
        scores,
        frames_used,
        stop_step: frames_used,
        visited,
        utilities,
        cost_gflops: CostModel::default().adaframe(frames_used),
    })
}

/// Exactly `horizon` deterministic steps; prediction from the last one.
pub fn run_fixed(
    params: &AgentParameters,
    sequence: &FeatureSequence,
    memory: &GlobalMemory,
    horizon: usize,
    start: StartFrame,
) -> Result<InferenceResult> {
    run_adaptive(params, sequence, memory, &StopConfig::fixed(horizon)?, start)
}

/// Shannon entropy in nats.
pub fn entropy(scores: &[f64]) -> f64 {
    -scores.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Per step, whether the entropy of the scores has fallen below `threshold`.
pub fn stop_by_entropy(stream: &[Vec<f64>], threshold: f64) -> Vec<bool> {
    stream.iter().map(|s| entropy(s) < threshold).collect()
}

/// First (1-based) step at which the entropy rule fires.
pub fn entropy_stop_step(stream: &[Vec<f64>], threshold: f64) -> Option<usize> {
    stop_by_entropy(stream, threshold).iter().position(|&b| b).map(|i| i + 1)
}

/// How the memory overhead is charged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OverheadMode {
    /// Overhead paid for every observed frame.
    #[default]
    PerFrame,
    /// Overhead paid once per video.
    OneTime,
}

/// GFLOPs accounting: feature extraction dominates, so cost is linear in the
/// number of frames observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub gflops_full_frame: f64,
    pub gflops_adaframe_overhead_per_frame: f64,
    /// Recurrent network and heads, per step; zero unless counted explicitly.
    pub gflops_lstm: f64,
    pub overhead_mode: OverheadMode,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            gflops_full_frame: 7.82,
            gflops_adaframe_overhead_per_frame: 1.32,
            gflops_lstm: 0.0,
            overhead_mode: OverheadMode::PerFrame,
        }
    }
}

impl CostModel {
    /// Counts the agent's own arithmetic as two FLOPs per parameter per step.
    pub fn with_exact_lstm(self, params: &AgentParameters) -> Self {
        CostModel {
            gflops_lstm: 2.0 * params.param_count() as f64 * 1e-9,
            ..self
        }
    }

    pub fn adaframe(&self, frames: usize) -> f64 {
        let n = frames as f64;
        let overhead = match self.overhead_mode {
            OverheadMode::PerFrame => n * self.gflops_adaframe_overhead_per_frame,
            OverheadMode::OneTime if frames > 0 => self.gflops_adaframe_overhead_per_frame,
            OverheadMode::OneTime => 0.0,
        };
        n * (self.gflops_full_frame + self.gflops_lstm) + overhead
    }

    pub fn baseline(&self, frames: usize) -> f64 {
        frames as f64 * self.gflops_full_frame
    }

    pub fn adaframe_per_frame(&self) -> f64 {
        self.adaframe(1)
    }
}

pub fn cost_of(result: &InferenceResult, model: &CostModel) -> f64 {
    model.adaframe(result.frames_used)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{init_params, Dims};
    use crate::numerics::{Matrix, Rng};

    fn stop_step(utilities: &[f64], stop: &StopConfig) -> usize {
        let mut m = stop.monitor();
        for (t, &u) in utilities.iter().enumerate().take(stop.horizon) {
            if m.observe(u) {
                return t + 1;
            }
        }
        utilities.len().min(stop.horizon)
    }

    #[test]
    fn rule_examples() {
        let s = StopConfig::new(0.05, 2, 3).unwrap();
        assert_eq!(stop_step(&[5.0, 4.9, 4.9], &s), 3);
        let s = StopConfig::new(0.05, 2, 6).unwrap();
        assert_eq!(stop_step(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &s), 6);
        let s = StopConfig::new(f64::INFINITY, 1, 4).unwrap();
        assert_eq!(stop_step(&[9.0, -9.0, -9.0, -9.0], &s), 4);
        // a drop of exactly μ is not a violation
        let s = StopConfig::new(0.5, 1, 4).unwrap();
        assert_eq!(stop_step(&[1.0, 0.5, 0.5, 0.4], &s), 4);
    }

    #[test]
    fn consecutive_counting_resets() {
        let mut s = StopConfig::new(0.1, 2, 10).unwrap();
        let trace = [1.0, 0.5, 1.2, 0.5, 2.0, 0.1, 0.1];
        assert_eq!(stop_step(&trace, &s), 4);
        s.counting = PatienceCounting::Consecutive;
        assert_eq!(stop_step(&trace, &s), 7);
    }

    #[test]
    fn default_patience() {
        assert_eq!(StopConfig::default_patience(0.3, 10), 2);
        assert_eq!(StopConfig::default_patience(0.7, 10), 6);
        assert_eq!(StopConfig::default_patience(0.7, 5), 3);
        assert!(StopConfig::new(-0.1, 1, 3).is_err());
        assert!(StopConfig::new(0.1, 0, 3).is_err());
    }

    #[test]
    fn entropy_rule() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(entropy_stop_step(&[vec![0.0, 1.0]], 1e-9), Some(1));
        let uniform = vec![vec![0.25; 4]; 5];
        assert!((entropy(&uniform[0]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy_stop_step(&uniform, 4f64.ln() - 1e-9), None);

        let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((entropy(&[0.9, 0.1]) - 0.325_082_973_391_448_2).abs() < 1e-15);
        assert!((h - 0.3251).abs() < 1e-4);
        assert_eq!(stop_by_entropy(&[vec![0.9, 0.1]], 0.3252), vec![true]);
        assert_eq!(stop_by_entropy(&[vec![0.9, 0.1]], 0.3250), vec![false]);
    }

    #[test]
    fn costs() {
        let m = CostModel::default();
        assert!((m.baseline(25) - 195.5).abs() < 1e-9);
        assert!((m.adaframe(1) - 9.14).abs() < 1e-9);
        assert_eq!(m.adaframe(0), 0.0);
        assert_eq!(m.baseline(0), 0.0);
        for n in 0..30 {
            assert!((m.adaframe(n) - n as f64 * m.adaframe_per_frame()).abs() < 1e-9);
        }
        let once = CostModel {
            overhead_mode: OverheadMode::OneTime,
            ..m
        };
        assert!((once.adaframe(10) - (78.2 + 1.32)).abs() < 1e-9);
    }

    fn model() -> (AgentParameters, FeatureSequence, GlobalMemory) {
        let d = Dims {
            d_full: 6,
            d_mem: 4,
            hidden: 8,
            classes: 3,
        };
        let mut rng = Rng::new(21);
        let p = init_params(d, 1.0, &mut rng).unwrap();
        let seq = FeatureSequence::new(0, Matrix::from_fn(30, 6, |_, _| rng.uniform(-2.0, 2.0)), 1).unwrap();
        let mem = GlobalMemory::new(Matrix::from_fn(5, 4, |_, _| rng.uniform(-2.0, 2.0))).unwrap();
        (p, seq, mem)
    }

    #[test]
    fn fixed_equals_infinite_margin() {
        let (p, seq, mem) = model();
        let fixed = run_fixed(&p, &seq, &mem, 7, StartFrame::First).unwrap();
        let inf = run_adaptive(&p, &seq, &mem, &StopConfig::new(f64::INFINITY, 2, 7).unwrap(), StartFrame::First).unwrap();
        assert_eq!(fixed, inf);
        assert_eq!(fixed.frames_used, 7);
        assert_eq!(fixed, run_fixed(&p, &seq, &mem, 7, StartFrame::First).unwrap());
        let one = run_fixed(&p, &seq, &mem, 1, StartFrame::First).unwrap();
        assert_eq!(one.visited, vec![0]);
        assert!((cost_of(&one, &CostModel::default()) - 9.14).abs() < 1e-12);
    }

    #[test]
    fn early_stop_preserves_prefix() {
        let (p, seq, mem) = model();
        for mu in [0.0, 0.01, 0.1, 0.5] {
            let stop = StopConfig::new(mu, 1, 10).unwrap();
            let r = run_adaptive(&p, &seq, &mem, &stop, StartFrame::First).unwrap();
            let prefix = run_fixed(&p, &seq, &mem, r.stop_step, StartFrame::First).unwrap();
            assert_eq!(r.scores, prefix.scores);
            assert_eq!(r.visited, prefix.visited);
            assert_eq!(r.stop_step, r.frames_used);
            assert!(r.frames_used >= 1 && r.frames_used <= 10);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frames_monotone_in_margin(trace in proptest::collection::vec(-1.0f64..1.0, 1..12), p in 1usize..4) {
                let k = trace.len();
                let mut prev = 0;
                for mu in [0.0, 0.05, 0.1, 0.3, 0.7, f64::INFINITY] {
                    let n = stop_step(&trace, &StopConfig::new(mu, p, k).unwrap());
                    prop_assert!(n >= prev);
                    prev = n;
                }
                prop_assert_eq!(prev, k);
            }

            #[test]
            fn entropy_in_range(raw in proptest::collection::vec(0.0f64..1.0, 2..10)) {
                let total: f64 = raw.iter().sum::<f64>() + 1e-9;
                let s: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / total).collect();
                let h = entropy(&s);
                prop_assert!(h >= 0.0 && h <= (s.len() as f64).ln() + 1e-12);
            }
        }
    }
}

use crate::error::{Error, Result};
use crate::memory::GlobalMemory;
use crate::numerics::{gaussian_sample, Matrix, Rng};

use super::{
    location_to_index, step_backward, step_cached, AgentParameters, AgentState, HeadGrads, StepCache, StepOutput,
};

/// Which frame the agent observes first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StartFrame {
    #[default]
    First,
    Middle,
}

impl StartFrame {
    pub fn index(self, frames: usize) -> usize {
        match self {
            StartFrame::First => 0,
            StartFrame::Middle => frames / 2,
        }
    }
}

/// How the next location `ℓ_{t+1}` is chosen from `a_t`.
pub enum LocationPolicy<'a> {
    /// `ℓ ~ N(a_t, stddev²)`, the training-time policy.
    Sample { stddev: f64, rng: &'a mut Rng },
    /// `ℓ = a_t`, the test-time policy.
    Mean,
    /// Fixed, previously drawn locations (one per step).
    Replay(&'a [f64]),
}

#[derive(Debug, Clone)]
pub struct RolloutStep {
    /// Frame observed at this step.
    pub frame: usize,
    pub output: StepOutput,
    /// Unclamped location drawn from the policy after this step.
    pub next_location: f64,
    cache: Option<StepCache>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn visited(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.frame).collect()
    }

    pub fn locations(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.next_location).collect()
    }

    pub fn last_output(&self) -> Option<&StepOutput> {
        self.steps.last().map(|s| &s.output)
    }
}

/// Runs `steps` agent steps over one sequence (`frames` is `T × D_full`).
///
/// With `record` set, every step keeps its forward cache for [`backward`].
pub fn rollout(
    params: &AgentParameters,
    frames: &Matrix,
    memory: &GlobalMemory,
    steps: usize,
    start: StartFrame,
    mut policy: LocationPolicy<'_>,
    record: bool,
) -> Result<Rollout> {
    if frames.rows() == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    if let LocationPolicy::Replay(ls) = &policy {
        if ls.len() < steps {
            return Err(Error::shape("rollout replay", steps, ls.len()));
        }
    }
    let total = frames.rows();
    let mut state = AgentState::initial(params.dims());
    let mut frame = start.index(total);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let (next, output, _, cache) = step_cached(params, &state, frames.row(frame), memory)?;
        let next_location = match &mut policy {
            LocationPolicy::Sample { stddev, rng } => gaussian_sample(output.location_mean, *stddev, rng)?,
            LocationPolicy::Mean => output.location_mean,
            LocationPolicy::Replay(ls) => ls[t],
        };
        out.push(RolloutStep {
            frame,
            output,
            next_location,
            cache: record.then_some(cache),
        });
        frame = location_to_index(next_location, total);
        state = next;
    }
    Ok(Rollout { steps: out })
}

/// Back-propagation through time over a recorded rollout, given head
/// gradients for every step. Returns the parameter gradient.
pub fn backward(params: &AgentParameters, rollout: &Rollout, heads: &[HeadGrads]) -> Result<AgentParameters> {
    if heads.len() != rollout.len() {
        return Err(Error::shape("backward", rollout.len(), heads.len()));
    }
    let hidden = params.dims().hidden;
    let mut grads = params.zeros_like();
    let mut d_h = vec![0.0; hidden];
    let mut d_c = vec![0.0; hidden];
    for (t, (step, head)) in rollout.steps.iter().zip(heads).enumerate().rev() {
        if step.cache.is_none() {
            return Err(Error::MissingCache(format!("rollout step {}", t + 1)));
        }
        let (dh, dc) = step_backward(params, step.cache.as_ref(), head, &d_h, &d_c, &mut grads)?;
        d_h = dh;
        d_c = dc;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{init_params, Dims};
    use crate::numerics::{dot, finite_diff_grad, max_relative_error};

    fn setup(seed: u64) -> (AgentParameters, Matrix, GlobalMemory) {
        let d = Dims {
            d_full: 5,
            d_mem: 4,
            hidden: 7,
            classes: 3,
        };
        let mut rng = Rng::new(seed);
        let p = init_params(d, 0.6, &mut rng).unwrap();
        let frames = Matrix::from_fn(12, 5, |_, _| rng.uniform(-1.0, 1.0));
        let mem = GlobalMemory::new(Matrix::from_fn(3, 4, |_, _| rng.uniform(-1.0, 1.0))).unwrap();
        (p, frames, mem)
    }

    #[test]
    fn replay_reproduces_sampled_rollout() {
        let (p, frames, mem) = setup(3);
        let mut rng = Rng::new(10);
        let sampled = rollout(
            &p,
            &frames,
            &mem,
            5,
            StartFrame::First,
            LocationPolicy::Sample { stddev: 0.1, rng: &mut rng },
            false,
        )
        .unwrap();
        let ls = sampled.locations();
        let replayed = rollout(&p, &frames, &mem, 5, StartFrame::First, LocationPolicy::Replay(&ls), false).unwrap();
        assert_eq!(sampled.visited(), replayed.visited());
        assert_eq!(sampled.visited()[0], 0);
        for (a, b) in sampled.steps.iter().zip(&replayed.steps) {
            assert_eq!(a.output, b.output);
        }
    }

    #[test]
    fn middle_start() {
        let (p, frames, mem) = setup(4);
        let r = rollout(&p, &frames, &mem, 1, StartFrame::Middle, LocationPolicy::Mean, false).unwrap();
        assert_eq!(r.visited(), vec![6]);
    }

    #[test]
    fn backward_needs_recorded_caches() {
        let (p, frames, mem) = setup(5);
        let r = rollout(&p, &frames, &mem, 3, StartFrame::First, LocationPolicy::Mean, false).unwrap();
        let heads = vec![HeadGrads::default(); 3];
        assert!(matches!(backward(&p, &r, &heads), Err(Error::MissingCache(_))));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..4 {
            let (p, frames, mem) = setup(seed);
            let mut rng = Rng::new(seed + 100);
            let k = 4;
            let r = rollout(
                &p,
                &frames,
                &mem,
                k,
                StartFrame::First,
                LocationPolicy::Sample { stddev: 0.1, rng: &mut rng },
                true,
            )
            .unwrap();
            let ls = r.locations();
            // arbitrary linear functional of every head at every step
            let coeffs: Vec<(Vec<f64>, f64, f64)> = (0..k)
                .map(|_| {
                    (
                        (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                    )
                })
                .collect();
            let loss = |q: &AgentParameters| {
                let r = rollout(q, &frames, &mem, k, StartFrame::First, LocationPolicy::Replay(&ls), false).unwrap();
                r.steps
                    .iter()
                    .zip(&coeffs)
                    .map(|(s, (cs, ca, cv))| dot(cs, &s.output.scores) + ca * s.output.location_mean + cv * s.output.utility)
                    .sum::<f64>()
            };
            let heads: Vec<HeadGrads> = r
                .steps
                .iter()
                .zip(&coeffs)
                .map(|(s, (cs, ca, cv))| {
                    let sc = &s.output.scores;
                    let m = dot(sc, cs);
                    HeadGrads {
                        d_logits: Some(sc.iter().zip(cs).map(|(si, ci)| si * (ci - m)).collect()),
                        d_location_mean: *ca,
                        d_utility: *cv,
                    }
                })
                .collect();
            let g = backward(&p, &r, &heads).unwrap();
            let fd = finite_diff_grad(
                |flat| {
                    let mut q = p.clone();
                    q.set_flat(flat).unwrap();
                    loss(&q)
                },
                &p.to_flat(),
                1e-5,
            );
            let err = max_relative_error(&g.to_flat(), &fd);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}

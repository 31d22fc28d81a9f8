//! The memory-augmented LSTM agent and its three heads.
//!
//! Each step reads the current frame `v_t` and a context vector `u_t` obtained
//! by attending over the global memory with `h_{t−1}`. The new hidden state
//! feeds a softmax classifier, a sigmoid location head (mean of the Gaussian
//! selection policy) and a linear utility head.

mod checkpoint;
mod lstm;
mod rollout;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::{LstmCache, LstmCell};
pub use rollout::{backward, rollout, LocationPolicy, Rollout, RolloutStep, StartFrame};

use crate::error::{Error, Result};
use crate::memory::{attend_backward_into, attend_cached, AttentionCache, AttentionResult, GlobalMemory};
use crate::numerics::{axpy, dot, sigmoid, softmax, Matrix, Rng};

/// Layer sizes of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_full: usize,
    pub d_mem: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.d_full == 0 || self.d_mem == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("all dimensions must be positive: {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::invalid(format!("need at least two classes, got {}", self.classes)));
        }
        if self.d_mem % 2 != 0 {
            return Err(Error::invalid(format!("memory dimension must be even, got {}", self.d_mem)));
        }
        Ok(())
    }

    pub fn lstm_input(&self) -> usize {
        self.d_full + self.d_mem
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        LstmCell::param_count(self.lstm_input(), h) + self.d_mem * h + self.classes * h + self.classes + 2 * h
    }
}

/// All trainable weights.
///
/// Blocks, in checkpoint order: LSTM weights (`4H × (D_full + D_mem + H)`,
/// gate rows i, f, o, g), LSTM biases (`4H`), `W_h` (`D_mem × H`), `W_p`
/// (`C × H`), `b_p` (`C`), `w_s` (`H`), `w_u` (`H`).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParameters {
    dims: Dims,
    pub lstm: LstmCell,
    pub w_h: Matrix,
    pub w_p: Matrix,
    pub b_p: Vec<f64>,
    pub w_s: Vec<f64>,
    pub w_u: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 7] = ["lstm_w", "lstm_b", "w_h", "w_p", "b_p", "w_s", "w_u"];

/// Bias blocks are exempt from weight decay.
pub fn is_bias_block(name: &str) -> bool {
    matches!(name, "lstm_b" | "b_p")
}

impl AgentParameters {
    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        let h = dims.hidden;
        Ok(AgentParameters {
            dims,
            lstm: LstmCell::zeros(dims.lstm_input(), h),
            w_h: Matrix::zeros(dims.d_mem, h),
            w_p: Matrix::zeros(dims.classes, h),
            b_p: vec![0.0; dims.classes],
            w_s: vec![0.0; h],
            w_u: vec![0.0; h],
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        AgentParameters::zeros(self.dims).expect("dims already validated")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("lstm_w", self.lstm.w.data()),
            ("lstm_b", &self.lstm.b),
            ("w_h", self.w_h.data()),
            ("w_p", self.w_p.data()),
            ("b_p", &self.b_p),
            ("w_s", &self.w_s),
            ("w_u", &self.w_u),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            ("lstm_w", self.lstm.w.data_mut()),
            ("lstm_b", &mut self.lstm.b),
            ("w_h", self.w_h.data_mut()),
            ("w_p", self.w_p.data_mut()),
            ("b_p", &mut self.b_p),
            ("w_s", &mut self.w_s),
            ("w_u", &mut self.w_u),
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::shape("set_flat", n, flat.len()));
        }
        let mut offset = 0;
        for (_, block) in self.blocks_mut() {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(())
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &AgentParameters, scale: f64) {
        assert_eq!(self.dims, other.dims);
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            axpy(scale, src, dst);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, block) in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks().iter().map(|(_, b)| dot(b, b)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

/// Uniform weights in `[−scale, scale]`, forget-gate bias 1, other biases 0.
pub fn init_params(dims: Dims, scale: f64, rng: &mut Rng) -> Result<AgentParameters> {
    if !(scale >= 0.0) {
        return Err(Error::invalid(format!("init scale must be non-negative, got {scale}")));
    }
    let mut params = AgentParameters::zeros(dims)?;
    for (name, block) in params.blocks_mut() {
        if is_bias_block(name) {
            continue;
        }
        for v in block.iter_mut() {
            *v = rng.uniform(-scale, scale);
        }
    }
    params.lstm.forget_bias_mut().fill(1.0);
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Number of frames observed so far.
    pub t: usize,
}

impl AgentState {
    pub fn initial(dims: Dims) -> Self {
        AgentState {
            h: vec![0.0; dims.hidden],
            c: vec![0.0; dims.hidden],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Class distribution `s_t`.
    pub scores: Vec<f64>,
    /// Mean `a_t` of the next-location policy.
    pub location_mean: f64,
    /// Predicted utility `V̂_t`.
    pub utility: f64,
}

/// Forward values of one step needed by [`step_backward`].
#[derive(Debug, Clone)]
pub struct StepCache {
    attention: AttentionCache,
    lstm: LstmCache,
    h: Vec<f64>,
    scores: Vec<f64>,
    location_mean: f64,
}

impl StepCache {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

pub fn step(
    params: &AgentParameters,
    state: &AgentState,
    frame: &[f64],
    memory: &GlobalMemory,
) -> Result<(AgentState, StepOutput, AttentionResult)> {
    step_cached(params, state, frame, memory).map(|(s, o, a, _)| (s, o, a))
}

pub fn step_cached(
    params: &AgentParameters,
    state: &AgentState,
    frame: &[f64],
    memory: &GlobalMemory,
) -> Result<(AgentState, StepOutput, AttentionResult, StepCache)> {
    let dims = params.dims;
    if frame.len() != dims.d_full {
        return Err(Error::shape("step", format!("frame of dim {}", dims.d_full), frame.len()));
    }
    if memory.dim() != dims.d_mem {
        return Err(Error::shape("step", format!("memory of dim {}", dims.d_mem), memory.dim()));
    }
    if state.h.len() != dims.hidden || state.c.len() != dims.hidden {
        return Err(Error::shape("step", format!("state of dim {}", dims.hidden), state.h.len()));
    }

    let (attention, attention_cache) = attend_cached(memory, &state.h, &params.w_h)?;
    let mut input = Vec::with_capacity(dims.lstm_input());
    input.extend_from_slice(frame);
    input.extend_from_slice(&attention.context);
    let (h, c, lstm_cache) = params.lstm.forward(&input, &state.h, &state.c)?;

    let mut logits = params.w_p.matvec(&h)?;
    for (l, b) in logits.iter_mut().zip(&params.b_p) {
        *l += b;
    }
    let scores = softmax(&logits)?;
    let location_mean = sigmoid(dot(&params.w_s, &h));
    let utility = dot(&params.w_u, &h);
    if !utility.is_finite() {
        return Err(Error::NonFinite("utility head".into()));
    }

    let cache = StepCache {
        attention: attention_cache,
        lstm: lstm_cache,
        h: h.clone(),
        scores: scores.clone(),
        location_mean,
    };
    let next = AgentState { h, c, t: state.t + 1 };
    let output = StepOutput {
        scores,
        location_mean,
        utility,
    };
    Ok((next, output, attention, cache))
}

/// Upstream gradients arriving at one step's heads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadGrads {
    /// Gradient with respect to the classifier logits (before softmax).
    pub d_logits: Option<Vec<f64>>,
    /// Gradient with respect to `a_t`.
    pub d_location_mean: f64,
    /// Gradient with respect to `V̂_t`.
    pub d_utility: f64,
}

/// Backward through one step. Parameter gradients are accumulated into
/// `grads`; returns `(d_h_{t−1}, d_c_{t−1})`.
pub fn step_backward(
    params: &AgentParameters,
    cache: Option<&StepCache>,
    heads: &HeadGrads,
    d_h_next: &[f64],
    d_c_next: &[f64],
    grads: &mut AgentParameters,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = cache.ok_or_else(|| Error::MissingCache("agent step".into()))?;
    let dims = params.dims;
    if grads.dims != dims {
        return Err(Error::shape("step_backward", format!("{dims:?}"), format!("{:?}", grads.dims)));
    }
    if d_h_next.len() != dims.hidden || d_c_next.len() != dims.hidden {
        return Err(Error::shape("step_backward", dims.hidden, d_h_next.len()));
    }

    let mut d_h = d_h_next.to_vec();
    if let Some(dl) = &heads.d_logits {
        if dl.len() != dims.classes {
            return Err(Error::shape("step_backward", dims.classes, dl.len()));
        }
        grads.w_p.add_outer(dl, &cache.h, 1.0)?;
        axpy(1.0, dl, &mut grads.b_p);
        let back = params.w_p.tmatvec(dl)?;
        axpy(1.0, &back, &mut d_h);
    }
    let a = cache.location_mean;
    let d_pre_s = heads.d_location_mean * a * (1.0 - a);
    if d_pre_s != 0.0 {
        axpy(d_pre_s, &cache.h, &mut grads.w_s);
        axpy(d_pre_s, &params.w_s, &mut d_h);
    }
    if heads.d_utility != 0.0 {
        axpy(heads.d_utility, &cache.h, &mut grads.w_u);
        axpy(heads.d_utility, &params.w_u, &mut d_h);
    }

    let (d_input, mut d_h_prev, d_c_prev) = params.lstm.backward(&cache.lstm, &d_h, d_c_next, &mut grads.lstm)?;
    let d_context = &d_input[dims.d_full..];
    let d_h_attn = attend_backward_into(Some(&cache.attention), &params.w_h, None, d_context, &mut grads.w_h)?;
    axpy(1.0, &d_h_attn, &mut d_h_prev);
    Ok((d_h_prev, d_c_prev))
}

/// Maps a location in `[0, 1]` (clamped) to a frame index `min(⌊ℓT⌋, T−1)`.
pub fn location_to_index(location: f64, frames: usize) -> usize {
    assert!(frames >= 1, "sequence must have at least one frame");
    let l = if location.is_nan() { 0.0 } else { location.clamp(0.0, 1.0) };
    ((l * frames as f64).floor() as usize).min(frames - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_relative_error};

    fn dims() -> Dims {
        Dims {
            d_full: 8,
            d_mem: 4,
            hidden: 6,
            classes: 3,
        }
    }

    #[test]
    fn param_count_closed_form_matches_enumeration() {
        let p = AgentParameters::zeros(dims()).unwrap();
        // 4·6·(8+4+6) + 4·6 + 4·6 + 3·6 + 3 + 6 + 6
        assert_eq!(dims().param_count(), 432 + 24 + 24 + 18 + 3 + 6 + 6);
        assert_eq!(p.param_count(), dims().param_count());
        assert_eq!(p.to_flat().len(), dims().param_count());
    }

    #[test]
    fn init_zero_scale() {
        let p = init_params(dims(), 0.0, &mut Rng::new(1)).unwrap();
        let h = dims().hidden;
        for (name, block) in p.blocks() {
            if name == "lstm_b" {
                assert!(block[..h].iter().all(|v| *v == 0.0));
                assert!(block[h..2 * h].iter().all(|v| *v == 1.0));
                assert!(block[2 * h..].iter().all(|v| *v == 0.0));
            } else {
                assert!(block.iter().all(|v| *v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(dims(), 0.3, &mut Rng::new(77)).unwrap();
        let b = init_params(dims(), 0.3, &mut Rng::new(77)).unwrap();
        assert_eq!(a, b);
        assert!(a.to_flat().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut d = dims();
        d.classes = 1;
        assert!(init_params(d, 0.1, &mut Rng::new(0)).is_err());
        let mut d = dims();
        d.hidden = 0;
        assert!(init_params(d, 0.1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn zero_params_step() {
        let p = init_params(dims(), 0.0, &mut Rng::new(1)).unwrap();
        let mem = GlobalMemory::new(Matrix::from_fn(3, 4, |r, c| (r * c) as f64)).unwrap();
        let frame = vec![0.7; 8];
        let (s, out, _) = step(&p, &AgentState::initial(dims()), &frame, &mem).unwrap();
        assert!(s.h.iter().all(|v| *v == 0.0));
        assert!(s.c.iter().all(|v| *v == 0.0));
        assert_eq!(s.t, 1);
        for v in &out.scores {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.location_mean, 0.5);
        assert_eq!(out.utility, 0.0);
    }

    #[test]
    fn step_matches_scalar_recomputation() {
        let d = Dims {
            d_full: 3,
            d_mem: 2,
            hidden: 4,
            classes: 2,
        };
        let mut rng = Rng::new(99);
        let p = init_params(d, 0.7, &mut rng).unwrap();
        let mem = GlobalMemory::new(Matrix::from_fn(2, 2, |_, _| rng.uniform(-1.0, 1.0))).unwrap();
        let frame: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let state = AgentState {
            h: (0..4).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            c: (0..4).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            t: 3,
        };
        let (next, out, attn) = step(&p, &state, &frame, &mem).unwrap();

        // scalar oracle
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let pe = |j: usize, k: usize| {
            let angle = j as f64 / 10000f64.powf((k / 2 * 2) as f64 / 2.0);
            if k % 2 == 0 { angle.sin() } else { angle.cos() }
        };
        let mut z = [0.0; 2];
        for (j, zj) in z.iter_mut().enumerate() {
            for k in 0..2 {
                let mut q = 0.0;
                for m in 0..4 {
                    q += p.w_h.get(k, m) * state.h[m];
                }
                *zj += q * (mem.entries().get(j, k) + pe(j, k));
            }
        }
        let e0 = z[0].exp();
        let e1 = z[1].exp();
        let beta = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let mut u = [0.0; 2];
        for (k, uk) in u.iter_mut().enumerate() {
            for j in 0..2 {
                *uk += beta[j] * (mem.entries().get(j, k) + pe(j, k));
            }
        }
        let x = [frame[0], frame[1], frame[2], u[0], u[1], state.h[0], state.h[1], state.h[2], state.h[3]];
        let pre = |row: usize| {
            let mut acc = p.lstm.biases()[row];
            for (col, xv) in x.iter().enumerate() {
                acc += p.lstm.weights().get(row, col) * xv;
            }
            acc
        };
        let mut h = [0.0; 4];
        for k in 0..4 {
            let i = sig(pre(k));
            let f = sig(pre(4 + k));
            let o = sig(pre(8 + k));
            let g = pre(12 + k).tanh();
            let c = f * state.c[k] + i * g;
            assert!((next.c[k] - c).abs() < 1e-12);
            h[k] = o * c.tanh();
            assert!((next.h[k] - h[k]).abs() < 1e-12);
        }
        let mut logits = [0.0; 2];
        for (cl, l) in logits.iter_mut().enumerate() {
            *l = p.b_p[cl] + (0..4).map(|m| p.w_p.get(cl, m) * h[m]).sum::<f64>();
        }
        let s0 = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
        assert!((out.scores[0] - s0).abs() < 1e-12);
        let a = sig((0..4).map(|m| p.w_s[m] * h[m]).sum());
        assert!((out.location_mean - a).abs() < 1e-12);
        let v: f64 = (0..4).map(|m| p.w_u[m] * h[m]).sum();
        assert!((out.utility - v).abs() < 1e-12);
        assert!((attn.weights[0] - beta[0]).abs() < 1e-12);
    }

    #[test]
    fn step_dimension_mismatch() {
        let p = init_params(dims(), 0.1, &mut Rng::new(1)).unwrap();
        let mem = GlobalMemory::new(Matrix::zeros(3, 4)).unwrap();
        let s = AgentState::initial(dims());
        assert!(step(&p, &s, &[0.0; 7], &mem).is_err());
        let wrong_mem = GlobalMemory::new(Matrix::zeros(3, 6)).unwrap();
        assert!(step(&p, &s, &[0.0; 8], &wrong_mem).is_err());
    }

    #[test]
    fn location_mapping() {
        assert_eq!(location_to_index(0.5, 30), 15);
        assert_eq!(location_to_index(1.0, 30), 29);
        assert_eq!(location_to_index(-0.2, 10), 0);
        assert_eq!(location_to_index(1e6, 10), 9);
        assert_eq!(location_to_index(-1e6, 10), 0);
        assert_eq!(location_to_index(0.99, 1), 0);
    }

    #[test]
    fn backward_without_cache() {
        let p = init_params(dims(), 0.1, &mut Rng::new(1)).unwrap();
        let mut g = p.zeros_like();
        let err = step_backward(&p, None, &HeadGrads::default(), &[0.0; 6], &[0.0; 6], &mut g).unwrap_err();
        assert!(matches!(err, Error::MissingCache(_)));
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::new(5);
        let p = init_params(dims(), 0.5, &mut rng).unwrap();
        let mem = GlobalMemory::new(Matrix::from_fn(3, 4, |_, _| rng.uniform(-1.0, 1.0))).unwrap();
        let (_, _, _, cache) = step_cached(&p, &AgentState::initial(dims()), &[0.3; 8], &mem).unwrap();
        let mut g = p.zeros_like();
        let (dh, dc) = step_backward(&p, Some(&cache), &HeadGrads::default(), &[0.0; 6], &[0.0; 6], &mut g).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
        assert!(dh.iter().chain(&dc).all(|v| *v == 0.0));
    }

    #[test]
    fn cross_entropy_grad_on_output_layer() {
        // dL/dW_p = (s − y) hᵀ for L = −log s_gt
        let mut rng = Rng::new(8);
        let p = init_params(dims(), 0.5, &mut rng).unwrap();
        let mem = GlobalMemory::new(Matrix::from_fn(3, 4, |_, _| rng.uniform(-1.0, 1.0))).unwrap();
        let frame: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (next, out, _, cache) = step_cached(&p, &AgentState::initial(dims()), &frame, &mem).unwrap();
        let gt = 2;
        let mut d_logits = out.scores.clone();
        d_logits[gt] -= 1.0;
        let mut g = p.zeros_like();
        let heads = HeadGrads {
            d_logits: Some(d_logits.clone()),
            ..Default::default()
        };
        step_backward(&p, Some(&cache), &heads, &[0.0; 6], &[0.0; 6], &mut g).unwrap();
        for c in 0..3 {
            for k in 0..6 {
                assert!((g.w_p.get(c, k) - d_logits[c] * next.h[k]).abs() < 1e-15);
            }
        }
        let fd = finite_diff_grad(
            |w| {
                let mut q = p.clone();
                q.w_p.data_mut().copy_from_slice(w);
                let (_, o, _) = step(&q, &AgentState::initial(dims()), &frame, &mem).unwrap();
                -o.scores[gt].ln()
            },
            p.w_p.data(),
            1e-6,
        );
        assert!(max_relative_error(g.w_p.data(), &fd) < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #[test]
            fn location_index_in_range(l in -1e6f64..1e6, t in 1usize..500) {
                prop_assert!(location_to_index(l, t) < t);
            }

            #[test]
            fn step_outputs_valid(seed in 0u64..5000, scale in 0.0f64..3.0) {
                let mut rng = Rng::new(seed);
                let p = init_params(dims(), scale, &mut rng).unwrap();
                let mem = GlobalMemory::new(Matrix::from_fn(3, 4, |_, _| rng.uniform(-5.0, 5.0))).unwrap();
                let mut s = AgentState::initial(dims());
                for _ in 0..4 {
                    let frame: Vec<f64> = (0..8).map(|_| rng.uniform(-5.0, 5.0)).collect();
                    let (n, out, _) = step(&p, &s, &frame, &mem).unwrap();
                    prop_assert!((out.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(out.location_mean > 0.0 && out.location_mean < 1.0);
                    prop_assert!(n.h.iter().all(|v| v.abs() <= 1.0));
                    prop_assert!(n.c.iter().all(|v| v.is_finite()));
                    s = n;
                }
            }
        }
    }
}

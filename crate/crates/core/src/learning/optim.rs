use crate::agent::{is_bias_block, AgentParameters};
use crate::error::{Error, Result};
use crate::numerics::dot;

/// A set of named parameter blocks the optimizer can update in place.
pub trait ParamBlocks {
    fn param_blocks(&self) -> Vec<(&'static str, &[f64])>;
    fn param_blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;
    /// Whether weight decay applies to the named block.
    fn decays(name: &str) -> bool;
}

impl ParamBlocks for AgentParameters {
    fn param_blocks(&self) -> Vec<(&'static str, &[f64])> {
        self.blocks().to_vec()
    }

    fn param_blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        self.blocks_mut().into_iter().collect()
    }

    fn decays(name: &str) -> bool {
        !is_bias_block(name)
    }
}

pub fn global_norm<P: ParamBlocks>(grads: &P) -> f64 {
    grads.param_blocks().iter().map(|(_, b)| dot(b, b)).sum::<f64>().sqrt()
}

/// Rescales `grads` so that its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: ParamBlocks>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, b) in grads.param_blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// SGD with heavy-ball momentum and decoupled weight decay:
/// `v ← μ v + g`, `w ← w − lr·v − lr·wd·w` (decay skipped for biases).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1) and weight decay non-negative (got {momentum}, {weight_decay})"
            )));
        }
        Ok(Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn step<P: ParamBlocks>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let grads = grads.param_blocks();
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        }
        for (((name, w), (_, g)), v) in params.param_blocks_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            let decay = if P::decays(name) { self.weight_decay } else { 0.0 };
            for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *wi -= lr * *vi + lr * decay * *wi;
            }
        }
    }
}

/// Step decay: `lr₀ · factor^{⌊epoch / every⌋}`.
pub fn step_decay_lr(base: f64, epoch: usize, every: usize, factor: f64) -> f64 {
    if every == 0 {
        return base;
    }
    base * factor.powi((epoch / every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{init_params, Dims};
    use crate::numerics::Rng;

    fn params() -> AgentParameters {
        let d = Dims {
            d_full: 3,
            d_mem: 2,
            hidden: 4,
            classes: 2,
        };
        init_params(d, 0.5, &mut Rng::new(6)).unwrap()
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.set_flat(&(0..p.param_count()).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap();
        Sgd::new(0.0, 0.0).unwrap().step(&mut p, &g, 0.1);
        for ((a, b), gi) in p.to_flat().iter().zip(before.to_flat()).zip(g.to_flat()) {
            assert_eq!(*a, b - 0.1 * gi);
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.set_flat(&vec![1.0; p.param_count()]).unwrap();
        let mut opt = Sgd::new(0.9, 1e-4).unwrap();
        opt.step(&mut p, &g, 0.0);
        opt.step(&mut p, &g, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_and_decay() {
        let mut p = params();
        let w0 = p.w_s[0];
        let b0 = p.b_p[0];
        let mut g = p.zeros_like();
        g.w_s[0] = 1.0;
        g.b_p[0] = 1.0;
        let mut opt = Sgd::new(0.9, 0.1).unwrap();
        opt.step(&mut p, &g, 0.5);
        let w1 = w0 - 0.5 * 1.0 - 0.5 * 0.1 * w0;
        assert!((p.w_s[0] - w1).abs() < 1e-15);
        assert!((p.b_p[0] - (b0 - 0.5)).abs() < 1e-15);
        opt.step(&mut p, &g, 0.5);
        let w2 = w1 - 0.5 * 1.9 - 0.5 * 0.1 * w1;
        assert!((p.w_s[0] - w2).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = params();
        let n = global_norm(&g);
        assert!(n > 1.0);
        clip_global_norm(&mut g, 1.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let before = g.clone();
        clip_global_norm(&mut g, 10.0);
        assert_eq!(g, before);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(step_decay_lr(1e-2, 0, 40, 0.1), 1e-2);
        assert_eq!(step_decay_lr(1e-2, 39, 40, 0.1), 1e-2);
        assert!((step_decay_lr(1e-2, 40, 40, 0.1) - 1e-3).abs() < 1e-18);
        assert!((step_decay_lr(1e-2, 85, 40, 0.1) - 1e-4).abs() < 1e-18);
    }
}

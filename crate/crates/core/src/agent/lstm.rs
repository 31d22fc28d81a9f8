//! Single-layer LSTM cell with a hand-written backward pass.
//!
//! Gate rows are stacked in the order input, forget, output, candidate; the
//! weight matrix acts on `[x, h_{t−1}]`.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub(crate) w: Matrix,
    pub(crate) b: Vec<f64>,
    input_dim: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates, stacked like the weight rows.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmCell {
            w: Matrix::zeros(4 * hidden, input_dim + hidden),
            b: vec![0.0; 4 * hidden],
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn biases(&self) -> &[f64] {
        &self.b
    }

    pub fn forget_bias_mut(&mut self) -> &mut [f64] {
        let h = self.hidden;
        &mut self.b[h..2 * h]
    }

    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        4 * hidden * (input_dim + hidden) + 4 * hidden
    }

    /// One step; returns `(h_t, c_t)` and the values needed for backward.
    pub fn forward(&self, input: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
        let hd = self.hidden;
        if input.len() != self.input_dim || h_prev.len() != hd || c_prev.len() != hd {
            return Err(Error::shape(
                "LstmCell::forward",
                format!("input {} / state {hd}", self.input_dim),
                format!("input {} / h {} / c {}", input.len(), h_prev.len(), c_prev.len()),
            ));
        }
        let mut x = Vec::with_capacity(self.input_dim + hd);
        x.extend_from_slice(input);
        x.extend_from_slice(h_prev);

        let mut gates = self.w.matvec(&x)?;
        for (g, b) in gates.iter_mut().zip(&self.b) {
            *g += b;
        }
        for g in &mut gates[..3 * hd] {
            *g = sigmoid(*g);
        }
        for g in &mut gates[3 * hd..] {
            *g = g.tanh();
        }

        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, g) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        let cache = LstmCache {
            x,
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns
    /// `(d_input, d_h_prev, d_c_prev)`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        d_h: &[f64],
        d_c: &[f64],
        grads: &mut LstmCell,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let hd = self.hidden;
        if d_h.len() != hd || d_c.len() != hd {
            return Err(Error::shape("LstmCell::backward", hd, format!("{}/{}", d_h.len(), d_c.len())));
        }
        let gates = &cache.gates;
        let mut d_pre = vec![0.0; 4 * hd];
        let mut d_c_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, g) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let d_o = d_h[k] * tc;
            let dc = d_c[k] + d_h[k] * o * (1.0 - tc * tc);
            d_pre[k] = dc * g * i * (1.0 - i);
            d_pre[hd + k] = dc * cache.c_prev[k] * f * (1.0 - f);
            d_pre[2 * hd + k] = d_o * o * (1.0 - o);
            d_pre[3 * hd + k] = dc * i * (1.0 - g * g);
            d_c_prev[k] = dc * f;
        }
        grads.w.add_outer(&d_pre, &cache.x, 1.0)?;
        for (gb, d) in grads.b.iter_mut().zip(&d_pre) {
            *gb += d;
        }
        let mut d_x = self.w.tmatvec(&d_pre)?;
        let d_h_prev = d_x.split_off(self.input_dim);
        Ok((d_x, d_h_prev, d_c_prev))
    }
}

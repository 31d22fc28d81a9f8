//! Global memory bank and the soft-attention read that produces the LSTM's
//! context input.
//!
//! Entries are stored raw. The sinusoidal position code is added when the bank
//! is queried, and the encoded entries serve as both keys and values.

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax, Matrix};

const PE_BASE: f64 = 10_000.0;

/// Downsampled feature bank `[v^s_1, …, v^s_{T_d}]`, one row per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMemory {
    entries: Matrix,
}

impl GlobalMemory {
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.rows() == 0 {
            return Err(Error::invalid("global memory needs at least one entry"));
        }
        if entries.cols() == 0 || entries.cols() % 2 != 0 {
            return Err(Error::invalid(format!(
                "memory dimension must be even and positive, got {}",
                entries.cols()
            )));
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("memory entry".into()));
        }
        Ok(GlobalMemory { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// Every entry with its positional code added, `PE(v^s_j)`.
    pub fn encoded(&self) -> Matrix {
        let total = self.len();
        let mut out = self.entries.clone();
        for j in 0..total {
            add_position_code(out.row_mut(j), j);
        }
        out
    }
}

/// `v + PE(position)` with `PE(p, 2i) = sin(p / 10000^{2i/D})` and
/// `PE(p, 2i+1) = cos(p / 10000^{2i/D})`.
pub fn positional_encode(v: &[f64], position: usize, total: usize) -> Result<Vec<f64>> {
    if position >= total {
        return Err(Error::invalid(format!(
            "position {position} outside sequence of length {total}"
        )));
    }
    if v.is_empty() || v.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "positional encoding needs an even dimension, got {}",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    add_position_code(&mut out, position);
    Ok(out)
}

fn add_position_code(v: &mut [f64], position: usize) {
    let dim = v.len() as f64;
    let pos = position as f64;
    for (pair, chunk) in v.chunks_exact_mut(2).enumerate() {
        let angle = pos / PE_BASE.powf(2.0 * pair as f64 / dim);
        chunk[0] += angle.sin();
        chunk[1] += angle.cos();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// `β_t`, a distribution over memory entries.
    pub weights: Vec<f64>,
    /// `u_t = Σ_j β_{t,j} PE(v^s_j)`.
    pub context: Vec<f64>,
}

/// Forward values kept for [`attend_backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    h_prev: Vec<f64>,
    encoded: Matrix,
    weights: Vec<f64>,
}

pub fn attend(memory: &GlobalMemory, h_prev: &[f64], w_h: &Matrix) -> Result<AttentionResult> {
    attend_cached(memory, h_prev, w_h).map(|(r, _)| r)
}

pub fn attend_cached(
    memory: &GlobalMemory,
    h_prev: &[f64],
    w_h: &Matrix,
) -> Result<(AttentionResult, AttentionCache)> {
    if w_h.rows() != memory.dim() {
        return Err(Error::shape(
            "attend",
            format!("W_h with {} rows (memory dim)", memory.dim()),
            w_h.rows(),
        ));
    }
    let query = w_h.matvec(h_prev)?;
    let encoded = memory.encoded();
    let scores: Vec<f64> = encoded.iter_rows().map(|e| dot(&query, e)).collect();
    let weights = softmax(&scores)?;
    let mut context = vec![0.0; memory.dim()];
    for (e, &b) in encoded.iter_rows().zip(&weights) {
        axpy(b, e, &mut context);
    }
    let cache = AttentionCache {
        h_prev: h_prev.to_vec(),
        encoded,
        weights: weights.clone(),
    };
    Ok((AttentionResult { weights, context }, cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub d_h_prev: Vec<f64>,
    pub d_w_h: Matrix,
}

/// Back-propagates gradients on `β_t` (optional) and `u_t` to `h_{t−1}` and `W_h`.
pub fn attend_backward(
    cache: Option<&AttentionCache>,
    w_h: &Matrix,
    d_weights: Option<&[f64]>,
    d_context: &[f64],
) -> Result<AttentionGrads> {
    let mut d_w_h = Matrix::zeros(w_h.rows(), w_h.cols());
    let d_h_prev = attend_backward_into(cache, w_h, d_weights, d_context, &mut d_w_h)?;
    Ok(AttentionGrads { d_h_prev, d_w_h })
}

/// Like [`attend_backward`], accumulating the `W_h` gradient into `d_w_h`.
pub(crate) fn attend_backward_into(
    cache: Option<&AttentionCache>,
    w_h: &Matrix,
    d_weights: Option<&[f64]>,
    d_context: &[f64],
    d_w_h: &mut Matrix,
) -> Result<Vec<f64>> {
    let cache = cache.ok_or_else(|| Error::MissingCache("attention".into()))?;
    let n = cache.weights.len();
    if d_context.len() != cache.encoded.cols() {
        return Err(Error::shape(
            "attend_backward",
            format!("context gradient of length {}", cache.encoded.cols()),
            d_context.len(),
        ));
    }
    if let Some(dw) = d_weights {
        if dw.len() != n {
            return Err(Error::shape("attend_backward", format!("{n} weight grads"), dw.len()));
        }
    }
    if !w_h.same_shape(d_w_h) || w_h.cols() != cache.h_prev.len() {
        return Err(Error::shape(
            "attend_backward",
            format!("{}x{}", w_h.rows(), cache.h_prev.len()),
            format!("{}x{}", d_w_h.rows(), d_w_h.cols()),
        ));
    }

    // dβ_j = dβ_j(upstream) + d_u · e_j
    let d_beta: Vec<f64> = cache
        .encoded
        .iter_rows()
        .enumerate()
        .map(|(j, e)| dot(d_context, e) + d_weights.map_or(0.0, |dw| dw[j]))
        .collect();
    let mean = dot(&cache.weights, &d_beta);
    let d_scores: Vec<f64> = cache
        .weights
        .iter()
        .zip(&d_beta)
        .map(|(b, db)| b * (db - mean))
        .collect();
    let d_query = cache.encoded.tmatvec(&d_scores)?;
    d_w_h.add_outer(&d_query, &cache.h_prev, 1.0)?;
    w_h.tmatvec(&d_query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_relative_error, Rng};

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn position_zero_is_sin0_cos0() {
        let pe = positional_encode(&[0.0; 4], 0, 8).unwrap();
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_one_matches_formula() {
        let pe = positional_encode(&[0.0; 4], 1, 8).unwrap();
        // 10000^{2/4} = 100
        let expect = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in pe.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(pe, positional_encode(&[0.0; 4], 1, 8).unwrap());
    }

    #[test]
    fn positional_encode_rejects_bad_input() {
        assert!(positional_encode(&[0.0; 3], 0, 4).is_err());
        assert!(positional_encode(&[0.0; 4], 4, 4).is_err());
        assert!(GlobalMemory::new(Matrix::zeros(2, 3)).is_err());
        assert!(GlobalMemory::new(Matrix::zeros(0, 4)).is_err());
    }

    #[test]
    fn identical_entries_give_uniform_weights() {
        // identical raw entries differ once encoded, so equal scores need a
        // zero query: either h_{t-1} = 0 (the first step) or W_h = 0
        let mem = GlobalMemory::new(Matrix::from_fn(3, 4, |_, c| c as f64)).unwrap();
        let r = attend(&mem, &[0.0, 0.0], &Matrix::from_fn(4, 2, |r, c| (r + c) as f64)).unwrap();
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }

        let r = attend(&mem, &[0.3, -0.2], &Matrix::zeros(4, 2)).unwrap();
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let enc = mem.encoded();
        for c in 0..4 {
            let mean = (0..3).map(|j| enc.get(j, c)).sum::<f64>() / 3.0;
            assert!((r.context[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_match_scalar_scores() {
        let mut rng = Rng::new(5);
        let mem = GlobalMemory::new(random_matrix(3, 4, &mut rng)).unwrap();
        let w_h = random_matrix(4, 5, &mut rng);
        let h: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let mut z = [0.0f64; 3];
        for (j, zj) in z.iter_mut().enumerate() {
            for d in 0..4 {
                let q: f64 = (0..5).map(|k| w_h.get(d, k) * h[k]).sum();
                let i = (d / 2) as f64;
                let angle = j as f64 / 10000f64.powf(2.0 * i / 4.0);
                let pe = if d % 2 == 0 { angle.sin() } else { angle.cos() };
                *zj += q * (mem.entries().get(j, d) + pe);
            }
        }
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let r = attend(&mem, &h, &w_h).unwrap();
        for j in 0..3 {
            assert!((r.weights[j] - z[j].exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn large_query_scale_sharpens() {
        let mut rng = Rng::new(9);
        let mem = GlobalMemory::new(random_matrix(5, 6, &mut rng)).unwrap();
        let w_h = random_matrix(6, 4, &mut rng);
        let h: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let big: Vec<f64> = h.iter().map(|v| v * 1e3).collect();
        let r = attend(&mem, &big, &w_h).unwrap();
        let max = r.weights.iter().copied().fold(0.0, f64::max);
        assert!(max > 0.999);
    }

    #[test]
    fn dimension_mismatch() {
        let mem = GlobalMemory::new(Matrix::zeros(2, 4)).unwrap();
        assert!(attend(&mem, &[0.0; 3], &Matrix::zeros(6, 3)).is_err());
        assert!(attend(&mem, &[0.0; 2], &Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn backward_without_cache_fails() {
        let err = attend_backward(None, &Matrix::zeros(4, 2), None, &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::MissingCache(_)));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::new(1);
        let mem = GlobalMemory::new(random_matrix(4, 6, &mut rng)).unwrap();
        let w_h = random_matrix(6, 5, &mut rng);
        let h: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, cache) = attend_cached(&mem, &h, &w_h).unwrap();
        let g = attend_backward(Some(&cache), &w_h, Some(&[0.0; 4]), &[0.0; 6]).unwrap();
        assert!(g.d_h_prev.iter().all(|v| *v == 0.0));
        assert!(g.d_w_h.data().iter().all(|v| *v == 0.0));
    }

    /// Loss `c·u + d·β` checked against central differences in both `h` and `W_h`.
    fn check_backward(seed: u64, t_d: usize, d_mem: usize, hidden: usize, zero_w: bool) {
        let mut rng = Rng::new(seed);
        let mem = GlobalMemory::new(random_matrix(t_d, d_mem, &mut rng)).unwrap();
        let w_h = if zero_w {
            Matrix::zeros(d_mem, hidden)
        } else {
            random_matrix(d_mem, hidden, &mut rng)
        };
        let h: Vec<f64> = (0..hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let cu: Vec<f64> = (0..d_mem).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let cb: Vec<f64> = (0..t_d).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let loss = |h: &[f64], w: &Matrix| {
            let r = attend(&mem, h, w).unwrap();
            dot(&cu, &r.context) + dot(&cb, &r.weights)
        };
        let (_, cache) = attend_cached(&mem, &h, &w_h).unwrap();
        let g = attend_backward(Some(&cache), &w_h, Some(&cb), &cu).unwrap();

        let fd_h = finite_diff_grad(|p| loss(p, &w_h), &h, 1e-6);
        assert!(max_relative_error(&g.d_h_prev, &fd_h) < 1e-4);

        let fd_w = finite_diff_grad(
            |p| loss(&h, &Matrix::from_vec(d_mem, hidden, p.to_vec()).unwrap()),
            w_h.data(),
            1e-6,
        );
        assert!(max_relative_error(g.d_w_h.data(), &fd_w) < 1e-4);
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_backward(17, 4, 6, 5, false);
        check_backward(18, 3, 2, 3, false);
    }

    #[test]
    fn backward_at_zero_projection() {
        check_backward(23, 4, 6, 5, true);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #[test]
            fn weights_form_distribution(seed in 0u64..10_000, t_d in 1usize..20, half in 1usize..5) {
                let mut rng = Rng::new(seed);
                let mem = GlobalMemory::new(random_matrix(t_d, 2 * half, &mut rng)).unwrap();
                let w = random_matrix(2 * half, 3, &mut rng);
                let h: Vec<f64> = (0..3).map(|_| rng.uniform(-3.0, 3.0)).collect();
                let r = attend(&mem, &h, &w).unwrap();
                prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(r.weights.iter().all(|b| (0.0..=1.0).contains(b)));
            }

            #[test]
            fn context_invariant_under_entry_permutation(seed in 0u64..10_000) {
                // scores depend only on each encoded vector, so reordering the
                // encoded bank leaves the context unchanged
                let mut rng = Rng::new(seed);
                let mem = GlobalMemory::new(random_matrix(5, 4, &mut rng)).unwrap();
                let w = random_matrix(4, 3, &mut rng);
                let h: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let enc = mem.encoded();
                let mut order: Vec<usize> = (0..5).collect();
                rng.shuffle(&mut order);
                let q = w.matvec(&h).unwrap();
                let ctx = |rows: &[usize]| {
                    let z: Vec<f64> = rows.iter().map(|&j| dot(&q, enc.row(j))).collect();
                    let b = softmax(&z).unwrap();
                    let mut u = vec![0.0; 4];
                    for (&j, bj) in rows.iter().zip(&b) {
                        axpy(*bj, enc.row(j), &mut u);
                    }
                    u
                };
                let base = attend(&mem, &h, &w).unwrap().context;
                let perm = ctx(&order);
                for (a, b) in base.iter().zip(&perm) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

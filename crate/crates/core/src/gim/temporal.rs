//! Degree-normalized graph convolution over one node's temporal graph.

use crate::error::{PastError, Result};
use crate::numcore::activation::{relu, sigmoid, softplus};
use crate::numcore::linalg::{add_col_sums, gemm};
use crate::numcore::NumArray;

/// Regularizer added to every degree so isolated vertices stay finite.
pub const DEGREE_EPS: f64 = 1e-6;

/// Forward intermediates of one temporal layer on one node graph.
#[derive(Debug, Clone)]
pub(crate) struct TemporalPass {
    /// Row-normalized weights `(D + eps)^-1 A`, `V×V`.
    pub norm: Vec<f64>,
    /// `deg_r + eps` per row.
    pub deg: Vec<f64>,
    /// Aggregated states `norm · H`, `V×d`.
    pub agg: Vec<f64>,
    /// Pre-activation `agg · Wᵀ + b`, `V×d`.
    pub pre: Vec<f64>,
}

impl TemporalPass {
    pub fn output(&self) -> Vec<f64> {
        self.pre.iter().map(|&v| relu(v)).collect()
    }
}

/// Run one temporal layer. `edge_weight` holds `softplus(edge_logits)`.
pub(crate) fn temporal_pass(
    states: &[f64],
    v: usize,
    d: usize,
    adj: &[f64],
    edge_weight: &[f64],
    w: &[f64],
    b: &[f64],
) -> TemporalPass {
    let mut norm = vec![0.0; v * v];
    let mut deg = vec![0.0; v];
    for r in 0..v {
        let row = &mut norm[r * v..(r + 1) * v];
        let mut s = 0.0;
        for j in 0..v {
            let a = adj[r * v + j] * edge_weight[r * v + j];
            row[j] = a;
            s += a;
        }
        let s = s + DEGREE_EPS;
        deg[r] = s;
        row.iter_mut().for_each(|x| *x /= s);
    }
    let mut agg = vec![0.0; v * d];
    gemm(v, v, d, &norm, false, states, false, &mut agg, false);
    let mut pre = vec![0.0; v * d];
    for r in 0..v {
        pre[r * d..(r + 1) * d].copy_from_slice(b);
    }
    gemm(v, d, d, &agg, false, w, true, &mut pre, true);
    TemporalPass { norm, deg, agg, pre }
}

/// Gradient accumulators of one temporal layer.
pub(crate) struct TemporalGrads<'a> {
    pub logits: &'a mut [f64],
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Backpropagate `d_out` (gradient of the post-ReLU output, `V×d`).
/// Adds the state gradient into `d_states`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn temporal_backward(
    pass: &TemporalPass,
    states: &[f64],
    v: usize,
    d: usize,
    adj: &[f64],
    edge_weight_grad: &[f64],
    w: &[f64],
    d_out: &[f64],
    grads: &mut TemporalGrads<'_>,
    d_states: &mut [f64],
) {
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&pass.pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();
    add_col_sums(v, d, &d_pre, grads.b);
    gemm(d, v, d, &d_pre, true, &pass.agg, false, grads.w, true);
    let mut d_agg = vec![0.0; v * d];
    gemm(v, d, d, &d_pre, false, w, false, &mut d_agg, false);

    gemm(v, v, d, &pass.norm, true, &d_agg, false, d_states, true);

    let mut d_norm = vec![0.0; v * v];
    gemm(v, d, v, &d_agg, false, states, true, &mut d_norm, false);
    for r in 0..v {
        let row = r * v..(r + 1) * v;
        let centre: f64 = d_norm[row.clone()]
            .iter()
            .zip(&pass.norm[row.clone()])
            .map(|(g, p)| g * p)
            .sum();
        let inv = 1.0 / pass.deg[r];
        for j in 0..v {
            let idx = r * v + j;
            if adj[idx] != 0.0 {
                grads.logits[idx] += (d_norm[idx] - centre) * inv * adj[idx] * edge_weight_grad[idx];
            }
        }
    }
}

/// `relu(((D + eps)^-1 A) H Wᵀ + b)` with `A = adj_mask ⊙ softplus(edge_logits)`.
///
/// Rows without incoming edges aggregate to zero, so they produce `relu(b)`.
pub fn temporal_forward(
    vertex_states: &NumArray,
    adj_mask: &NumArray,
    edge_logits: &NumArray,
    w_t: &NumArray,
    b_t: &NumArray,
) -> Result<NumArray> {
    let v = vertex_states.rows();
    let d = vertex_states.cols();
    adj_mask.expect_shape(&[v, v], "temporal adjacency")?;
    edge_logits.expect_shape(&[v, v], "edge logits")?;
    w_t.expect_shape(&[d, d], "temporal weight")?;
    if b_t.len() != d {
        return Err(PastError::Shape(format!("temporal bias has {} entries, need {d}", b_t.len())));
    }
    let weight: Vec<f64> = edge_logits.data().iter().map(|&x| softplus(x)).collect();
    let pass = temporal_pass(vertex_states.data(), v, d, adj_mask.data(), &weight, w_t.data(), b_t.data());
    NumArray::from_vec(&[v, d], pass.output())
}

pub(crate) fn edge_weights(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        logits.iter().map(|&x| softplus(x)).collect(),
        logits.iter().map(|&x| sigmoid(x)).collect(),
    )
}

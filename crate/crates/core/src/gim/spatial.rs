//! Multi-order spatial convolution over the road graph.

use crate::error::{PastError, Result};
use crate::numcore::activation::relu;
use crate::numcore::linalg::{add_col_sums, axpy, gemm, identity, square_matmul};
use crate::numcore::NumArray;

use super::DEGREE_EPS;

/// Symmetrically normalized adjacency powers `D_k^-1/2 A^k D_k^-1/2`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOperator {
    pub normalized_powers: Vec<NumArray>,
    /// Non-zero `(column, value)` pairs of each power, row by row. Road graphs
    /// are sparse, so propagation runs over these instead of the dense rows.
    nonzeros: Vec<Vec<Vec<(usize, f64)>>>,
}

impl SpatialOperator {
    pub fn order(&self) -> usize {
        self.normalized_powers.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.normalized_powers[0].rows()
    }
}

pub fn build_spatial_operator(a_s: &NumArray, k_order: usize) -> Result<SpatialOperator> {
    let n = a_s.rows();
    a_s.expect_shape(&[n, n], "spatial adjacency")?;
    if a_s.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(PastError::InvalidConfig("spatial adjacency must be finite and non-negative".into()));
    }
    let mut power = identity(n);
    let mut out = Vec::with_capacity(k_order + 1);
    for k in 0..=k_order {
        if k > 0 {
            power = square_matmul(n, &power, a_s.data());
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|r| 1.0 / (power[r * n..(r + 1) * n].iter().sum::<f64>() + DEGREE_EPS).sqrt())
            .collect();
        let mut normed = NumArray::zeros(&[n, n]);
        for r in 0..n {
            for c in 0..n {
                normed.set2(r, c, inv_sqrt[r] * power[r * n + c] * inv_sqrt[c]);
            }
        }
        out.push(normed);
    }
    let nonzeros = out
        .iter()
        .map(|p| {
            (0..n)
                .map(|r| p.row(r).iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(c, &v)| (c, v)).collect())
                .collect()
        })
        .collect();
    Ok(SpatialOperator { normalized_powers: out, nonzeros })
}

/// Forward intermediates of one spatial layer over a node-major `N×L×d` block.
#[derive(Debug, Clone)]
pub(crate) struct SpatialPass {
    /// Concatenated propagated features, `(N·L) × (K+1)d`.
    pub concat: Vec<f64>,
    pub pre: Vec<f64>,
}

impl SpatialPass {
    pub fn output(&self) -> Vec<f64> {
        self.pre.iter().map(|&v| relu(v)).collect()
    }
}

/// `relu([P_0 Z, ..., P_K Z] W_Sᵀ + b_S)` where `Z` is node-major with `rows`
/// feature rows of width `d` per node.
pub(crate) fn spatial_pass(
    op: &SpatialOperator,
    z: &[f64],
    n: usize,
    rows: usize,
    d: usize,
    w: &[f64],
    b: &[f64],
) -> SpatialPass {
    let kk = op.normalized_powers.len();
    let width = kk * d;
    let block = rows * d;
    let mut concat = vec![0.0; n * rows * width];
    let mut q = vec![0.0; n * block];
    for (k, p) in op.nonzeros.iter().enumerate() {
        q.fill(0.0);
        for (i, row) in p.iter().enumerate() {
            let dst = &mut q[i * block..(i + 1) * block];
            for &(j, v) in row {
                axpy(v, &z[j * block..(j + 1) * block], dst);
            }
        }
        for r in 0..n * rows {
            concat[r * width + k * d..r * width + (k + 1) * d].copy_from_slice(&q[r * d..(r + 1) * d]);
        }
    }
    let total = n * rows;
    let mut pre = vec![0.0; total * d];
    for r in 0..total {
        pre[r * d..(r + 1) * d].copy_from_slice(b);
    }
    gemm(total, width, d, &concat, false, w, true, &mut pre, true);
    SpatialPass { concat, pre }
}

/// Backpropagate the post-ReLU gradient `d_out`; adds into `d_z`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn spatial_backward(
    op: &SpatialOperator,
    pass: &SpatialPass,
    n: usize,
    rows: usize,
    d: usize,
    w: &[f64],
    d_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    d_z: &mut [f64],
) {
    let kk = op.normalized_powers.len();
    let width = kk * d;
    let total = n * rows;
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&pass.pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();
    add_col_sums(total, d, &d_pre, db);
    gemm(d, total, width, &d_pre, true, &pass.concat, false, dw, true);
    let mut d_concat = vec![0.0; total * width];
    gemm(total, d, width, &d_pre, false, w, false, &mut d_concat, false);
    let block = rows * d;
    let mut d_q = vec![0.0; total * d];
    for (k, p) in op.nonzeros.iter().enumerate() {
        for r in 0..total {
            d_q[r * d..(r + 1) * d].copy_from_slice(&d_concat[r * width + k * d..r * width + (k + 1) * d]);
        }
        // d_z[j] += p_ij d_q[i]
        for (i, row) in p.iter().enumerate() {
            for &(j, v) in row {
                axpy(v, &d_q[i * block..(i + 1) * block], &mut d_z[j * block..(j + 1) * block]);
            }
        }
    }
}

/// One spatial layer applied to a single time step's `N×d` node features.
pub fn spatial_forward(
    h_nodes: &NumArray,
    op: &SpatialOperator,
    w_s: &NumArray,
    b_s: &NumArray,
) -> Result<NumArray> {
    let n = h_nodes.rows();
    let d = h_nodes.cols();
    if op.n_nodes() != n {
        return Err(PastError::Shape(format!("operator has {} nodes, features have {n}", op.n_nodes())));
    }
    w_s.expect_shape(&[d, (op.order() + 1) * d], "spatial weight")?;
    if b_s.len() != d {
        return Err(PastError::Shape(format!("spatial bias has {} entries, need {d}", b_s.len())));
    }
    let pass = spatial_pass(op, h_nodes.data(), n, 1, d, w_s.data(), b_s.data());
    NumArray::from_vec(&[n, d], pass.output())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_reference(a: &NumArray, k: usize) -> Vec<Vec<f64>> {
        let n = a.rows();
        let mut out = Vec::new();
        let mut p = vec![vec![0.0; n]; n];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for step in 0..=k {
            if step > 0 {
                let mut next = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        for m in 0..n {
                            next[i][j] += p[i][m] * a.get2(m, j);
                        }
                    }
                }
                p = next;
            }
            let deg: Vec<f64> = p.iter().map(|r| r.iter().sum::<f64>() + DEGREE_EPS).collect();
            let mut flat = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    flat[i * n + j] = p[i][j] / (deg[i].sqrt() * deg[j].sqrt());
                }
            }
            out.push(flat);
        }
        out
    }

    #[test]
    fn order_zero_is_identity() {
        let a = NumArray::from_vec(&[2, 2], vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let op = build_spatial_operator(&a, 0).unwrap();
        assert_eq!(op.normalized_powers.len(), 1);
        let p0 = &op.normalized_powers[0];
        assert!((p0.get2(0, 0) - 1.0).abs() < 2e-6);
        assert_eq!(p0.get2(0, 1), 0.0);
    }

    #[test]
    fn identity_adjacency_powers_stay_identity() {
        let mut a = NumArray::zeros(&[3, 3]);
        for i in 0..3 {
            a.set2(i, i, 1.0);
        }
        let op = build_spatial_operator(&a, 3).unwrap();
        for p in &op.normalized_powers {
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((p.get2(i, j) - want).abs() < 2e-6);
                }
            }
        }
    }

    #[test]
    fn path_graph_matches_dense_reference() {
        let a = NumArray::from_vec(&[3, 3], vec![0., 1., 0., 1., 0., 1., 0., 1., 0.]).unwrap();
        let op = build_spatial_operator(&a, 2).unwrap();
        let want = dense_reference(&a, 2);
        for (p, w) in op.normalized_powers.iter().zip(&want) {
            for (x, y) in p.data().iter().zip(w) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // A^2 of the path: [[1,0,1],[0,2,0],[1,0,1]], row sums 2,2,2
        let p2 = &op.normalized_powers[2];
        assert!((p2.get2(0, 2) - 1.0 / (2.0 + DEGREE_EPS)).abs() < 1e-12);
    }

    #[test]
    fn order_zero_with_identity_weights_is_relu() {
        let a = NumArray::from_vec(&[2, 2], vec![0., 1., 1., 0.]).unwrap();
        let op = build_spatial_operator(&a, 0).unwrap();
        let h = NumArray::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut w = NumArray::zeros(&[2, 2]);
        w.set2(0, 0, 1.0);
        w.set2(1, 1, 1.0);
        let out = spatial_forward(&h, &op, &w, &NumArray::zeros(&[2])).unwrap();
        let s = 1.0 / (1.0 + DEGREE_EPS);
        for (o, x) in out.data().iter().zip(h.data()) {
            assert!((o - (x * s).max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_features_on_regular_graph_give_identical_rows() {
        // 4-cycle: every node has degree 2
        let mut a = NumArray::zeros(&[4, 4]);
        for i in 0..4 {
            a.set2(i, (i + 1) % 4, 1.0);
            a.set2((i + 1) % 4, i, 1.0);
        }
        let op = build_spatial_operator(&a, 2).unwrap();
        let h = NumArray::from_vec(&[4, 2], vec![0.3, -0.7].repeat(4)).unwrap();
        let w = NumArray::from_vec(&[2, 6], (0..12).map(|i| (i as f64 - 5.0) * 0.1).collect()).unwrap();
        let b = NumArray::from_vec(&[2], vec![0.2, 0.4]).unwrap();
        let out = spatial_forward(&h, &op, &w, &b).unwrap();
        for r in 1..4 {
            for c in 0..2 {
                assert!((out.get2(r, c) - out.get2(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_node_hand_case() {
        // A = [[0, a], [a, 0]], K = 1, d = 2
        let aw = 0.5;
        let a = NumArray::from_vec(&[2, 2], vec![0., aw, aw, 0.]).unwrap();
        let op = build_spatial_operator(&a, 1).unwrap();
        let h = NumArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let w = NumArray::from_vec(&[2, 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
        let b = NumArray::from_vec(&[2], vec![0.0, 0.5]).unwrap();
        let out = spatial_forward(&h, &op, &w, &b).unwrap();
        let s0 = 1.0 / (1.0 + DEGREE_EPS);
        let s1 = aw / (aw + DEGREE_EPS);
        // node 0: P0 h0 = s0 (1, 2); P1 h0 = s1 (3, -1)
        let n0 = [s0 * 1.0 + s1 * 3.0, s0 * 2.0 - s1 * -1.0 + 0.5];
        // node 1: P0 h1 = s0 (3, -1); P1 h1 = s1 (1, 2)
        let n1 = [s0 * 3.0 + s1 * 1.0, (s0 * -1.0 - s1 * 2.0 + 0.5f64).max(0.0)];
        assert!((out.get2(0, 0) - n0[0]).abs() < 1e-12);
        assert!((out.get2(0, 1) - n0[1]).abs() < 1e-12);
        assert!((out.get2(1, 0) - n1[0]).abs() < 1e-12);
        assert!((out.get2(1, 1) - n1[1]).abs() < 1e-12);
    }
}

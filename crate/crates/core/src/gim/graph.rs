//! Per-node temporal graphs and interval-aware edge dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PastError, Result};
use crate::numcore::NumArray;

/// Directed graph over `L` data vertices plus one injection vertex at index `L`.
///
/// `adj_mask[(i, j)] == 1` means an edge from `j` into `i`, so rows list
/// incoming neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    pub adj_mask: NumArray,
    pub injection_index: usize,
}

impl TemporalGraph {
    pub fn new(mask_column: &[f64], include_injection: bool) -> Result<Self> {
        Ok(Self {
            adj_mask: build_temporal_adjacency(mask_column, include_injection)?,
            injection_index: mask_column.len(),
        })
    }

    /// Indices of vertices with an edge into `i`.
    pub fn incoming(&self, i: usize) -> Vec<usize> {
        self.adj_mask
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Edge rules: observed vertices form a bidirectional clique, every observed
/// vertex points at every missing one, missing vertices never send edges, the
/// injection vertex (when included) points at all data vertices, and there are
/// no self-loops.
pub fn build_temporal_adjacency(mask_column: &[f64], include_injection: bool) -> Result<NumArray> {
    let l = mask_column.len();
    if let Some(v) = mask_column.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(PastError::InvalidConfig(format!("mask entry {v} is not 0 or 1")));
    }
    let v = l + 1;
    let mut adj = NumArray::zeros(&[v, v]);
    let data = adj.data_mut();
    for i in 0..l {
        for j in 0..l {
            if i != j && mask_column[j] == 1.0 {
                data[i * v + j] = 1.0;
            }
        }
        if include_injection {
            data[i * v + l] = 1.0;
        }
    }
    Ok(adj)
}

/// Offset that makes the mean of `exp(-alpha |i-j| + beta)` over all `L²`
/// vertex pairs equal `p`.
pub fn dropout_beta(alpha: f64, p: f64, seq_len: usize) -> f64 {
    let l = seq_len as f64;
    // sum_{i,j} e^{-alpha|i-j|} = L + 2 sum_{k=1}^{L-1} (L-k) e^{-alpha k}
    let mut total = l;
    for k in 1..seq_len {
        total += 2.0 * (l - k as f64) * (-alpha * k as f64).exp();
    }
    (p * l * l / total).ln()
}

/// Drop probability of an observed→missing edge spanning `dt` steps.
pub fn drop_probability(alpha: f64, beta: f64, dt: usize) -> f64 {
    (-alpha * dt as f64 + beta).exp().min(1.0)
}

/// Randomly remove observed→missing edges; other edges are kept. Identity
/// when `training` is false.
pub fn apply_interval_dropout(
    adj_mask: &NumArray,
    mask_column: &[f64],
    alpha: f64,
    beta: f64,
    training: bool,
    seed: u64,
) -> NumArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = adj_mask.clone();
    if training {
        drop_edges_in_place(&mut out, mask_column, alpha, beta, &mut rng);
    }
    out
}

pub(crate) fn drop_edges_in_place<R: Rng>(
    adj: &mut NumArray,
    mask_column: &[f64],
    alpha: f64,
    beta: f64,
    rng: &mut R,
) {
    let l = mask_column.len();
    let v = l + 1;
    let data = adj.data_mut();
    for i in (0..l).filter(|&i| mask_column[i] == 0.0) {
        for j in (0..l).filter(|&j| mask_column[j] == 1.0) {
            let idx = i * v + j;
            if data[idx] == 0.0 {
                continue;
            }
            let p = drop_probability(alpha, beta, i.abs_diff(j));
            if rng.random::<f64>() < p {
                data[idx] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn incoming_sets(mask: &[f64], inj: bool) -> Vec<Vec<usize>> {
        let g = TemporalGraph::new(mask, inj).unwrap();
        (0..=mask.len()).map(|i| g.incoming(i)).collect()
    }

    #[test]
    fn both_observed() {
        assert_eq!(incoming_sets(&[1.0, 1.0], true), vec![vec![1, 2], vec![0, 2], vec![]]);
    }

    #[test]
    fn both_missing() {
        assert_eq!(incoming_sets(&[0.0, 0.0], true), vec![vec![2], vec![2], vec![]]);
    }

    #[test]
    fn mixed_column() {
        assert_eq!(
            incoming_sets(&[1.0, 0.0, 1.0], true),
            vec![vec![2, 3], vec![0, 2, 3], vec![0, 3], vec![]]
        );
        assert_eq!(
            incoming_sets(&[1.0, 0.0, 1.0], false),
            vec![vec![2], vec![0, 2], vec![0], vec![]]
        );
    }

    #[test]
    fn beta_collapses_without_decay() {
        assert!((dropout_beta(0.0, 0.1, 96) - 0.1f64.ln()).abs() < 1e-12);
        assert!((dropout_beta(0.0, 0.1, 96) - 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_matches_direct_double_sum() {
        let (alpha, p, l) = (0.1, 0.1, 96usize);
        let mut sum = 0.0;
        for i in 1..=l {
            for j in 1..=l {
                sum += (-alpha * (j as f64 - i as f64).abs()).exp();
            }
        }
        let direct = (p * (l * l) as f64 / sum).ln();
        let beta = dropout_beta(alpha, p, l);
        assert!((beta - direct).abs() < 1e-12);
        assert!((beta + 0.625).abs() < 5e-3, "beta = {beta}");
    }

    #[test]
    fn eval_mode_is_passthrough() {
        let mask = [1.0, 0.0, 0.0, 1.0];
        let adj = build_temporal_adjacency(&mask, true).unwrap();
        assert_eq!(apply_interval_dropout(&adj, &mask, 0.0, 10.0, false, 1), adj);
    }

    #[test]
    fn saturated_dropout_keeps_injection_and_observed_edges() {
        let mask = [1.0, 0.0, 1.0, 0.0, 1.0];
        let adj = build_temporal_adjacency(&mask, true).unwrap();
        let out = apply_interval_dropout(&adj, &mask, 0.1, 50.0, true, 3);
        let g = TemporalGraph { adj_mask: out, injection_index: 5 };
        assert_eq!(g.incoming(1), vec![5]);
        assert_eq!(g.incoming(3), vec![5]);
        assert_eq!(g.incoming(0), vec![2, 4, 5]);
        assert_eq!(g.incoming(5), Vec::<usize>::new());
    }

    #[test]
    fn single_edge_drop_frequency() {
        let mask = [1.0, 0.0];
        let adj = build_temporal_adjacency(&mask, true).unwrap();
        let beta = 0.1f64.ln();
        let trials = 10_000;
        let dropped = (0..trials)
            .filter(|&s| apply_interval_dropout(&adj, &mask, 0.0, beta, true, s).get2(1, 0) == 0.0)
            .count();
        let freq = dropped as f64 / trials as f64;
        assert!((freq - 0.1).abs() < 0.01, "freq = {freq}");
    }
}

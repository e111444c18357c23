use crate::error::{PastError, Result};
use crate::numcore::NumArray;

/// Gaussian-kernel road adjacency: `a_ij = exp(-d_ij^2 / sigma^2)` for
/// connected pairs, where `sigma` is the population standard deviation of all
/// edge distances. Symmetric with a zero diagonal.
pub fn build_spatial_adjacency(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<NumArray> {
    if n_nodes < 1 {
        return Err(PastError::InvalidConfig("adjacency needs at least one node".into()));
    }
    if edges.is_empty() {
        return Err(PastError::InvalidConfig(
            "adjacency needs at least one edge to define the kernel width".into(),
        ));
    }
    for &(i, j, d) in edges {
        if i >= n_nodes || j >= n_nodes {
            return Err(PastError::Index(format!("edge ({i}, {j}) outside [0, {n_nodes})")));
        }
        if d < 0.0 || !d.is_finite() {
            return Err(PastError::InvalidConfig(format!("edge ({i}, {j}) distance {d}")));
        }
    }
    let count = edges.len() as f64;
    let mean = edges.iter().map(|e| e.2).sum::<f64>() / count;
    let var = edges.iter().map(|e| (e.2 - mean).powi(2)).sum::<f64>() / count;

    let mut a = NumArray::zeros(&[n_nodes, n_nodes]);
    let degenerate = var == 0.0;
    if degenerate {
        log::warn!("all edge distances are equal; using unit weights for connected pairs");
    }
    for &(i, j, d) in edges {
        if i == j {
            continue;
        }
        let w = if degenerate { 1.0 } else { (-d * d / var).exp() };
        a.set2(i, j, w);
        a.set2(j, i, w);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_equal_to_sigma_gives_inverse_e() {
        // distances {1, 3}: mean 2, sigma 1; the edge at distance 1 equals sigma
        let a = build_spatial_adjacency(3, &[(0, 1, 1.0), (1, 2, 3.0)]).unwrap();
        assert!((a.get2(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((a.get2(0, 1) - 0.367879).abs() < 1e-6);
        assert_eq!(a.get2(0, 2), 0.0);
    }

    #[test]
    fn three_distance_kernel() {
        let a = build_spatial_adjacency(4, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0)]).unwrap();
        // population variance of {1,2,3} is 2/3
        let var: f64 = 2.0 / 3.0;
        assert!((a.get2(1, 0) - (-1.0 / var).exp()).abs() < 1e-15);
        assert!((a.get2(0, 1) - 0.22313016014842982).abs() < 1e-15);
        assert!((a.get2(2, 3) - (-9.0 / var).exp()).abs() < 1e-15);
    }

    #[test]
    fn equal_distances_fall_back_to_unit_weights() {
        let a = build_spatial_adjacency(3, &[(0, 1, 2.0), (1, 2, 2.0)]).unwrap();
        assert_eq!(a.get2(0, 1), 1.0);
        assert_eq!(a.get2(2, 1), 1.0);
        assert_eq!(a.get2(0, 2), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(build_spatial_adjacency(0, &[(0, 0, 1.0)]).is_err());
        assert!(build_spatial_adjacency(2, &[]).is_err());
        assert!(build_spatial_adjacency(2, &[(0, 5, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_zero_diagonal_unit_range(
            edges in proptest::collection::vec((0usize..6, 0usize..6, 0.0f64..10.0), 1..15)
        ) {
            let a = build_spatial_adjacency(6, &edges).unwrap();
            for i in 0..6 {
                prop_assert_eq!(a.get2(i, i), 0.0);
                for j in 0..6 {
                    prop_assert_eq!(a.get2(i, j), a.get2(j, i));
                    prop_assert!((0.0..=1.0).contains(&a.get2(i, j)));
                }
            }
        }
    }
}

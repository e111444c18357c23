//! Classical imputation baselines operating on `T×N` grids.

use crate::numcore::NumArray;

/// Minimum number of co-observed steps for two nodes to be compared.
pub const KNN_MIN_OVERLAP: usize = 10;

fn check(x: &NumArray, m: &NumArray) -> crate::error::Result<()> {
    m.expect_shape(x.shape(), "baseline mask")
}

/// Per-node linear interpolation between the nearest observations, with
/// nearest-value fill before the first and after the last one. Columns with
/// no observation are filled with 0.
pub fn baseline_linear(x: &NumArray, m: &NumArray) -> crate::error::Result<NumArray> {
    check(x, m)?;
    let (t, n) = (x.rows(), x.cols());
    let mut out = x.clone();
    for u in 0..n {
        let obs: Vec<usize> = (0..t).filter(|&i| m.get2(i, u) == 1.0).collect();
        if obs.is_empty() {
            log::warn!("node {u} has no observations; filling with 0");
            (0..t).for_each(|i| out.set2(i, u, 0.0));
            continue;
        }
        let mut next = 0;
        for i in 0..t {
            if m.get2(i, u) == 1.0 {
                continue;
            }
            while next < obs.len() && obs[next] < i {
                next += 1;
            }
            let v = match (next.checked_sub(1).map(|p| obs[p]), obs.get(next)) {
                (Some(p), Some(&q)) => {
                    let (a, b) = (x.get2(p, u), x.get2(q, u));
                    a + (b - a) * (i - p) as f64 / (q - p) as f64
                }
                (Some(p), None) => x.get2(p, u),
                (None, Some(&q)) => x.get2(q, u),
                (None, None) => unreachable!("column has observations"),
            };
            out.set2(i, u, v);
        }
    }
    Ok(out)
}

/// Mean squared difference over co-observed steps, `None` below the overlap
/// threshold.
fn node_distance(x: &NumArray, m: &NumArray, a: usize, b: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..x.rows() {
        if m.get2(i, a) == 1.0 && m.get2(i, b) == 1.0 {
            let e = x.get2(i, a) - x.get2(i, b);
            sum += e * e;
            count += 1;
        }
    }
    (count >= KNN_MIN_OVERLAP).then(|| sum / count as f64)
}

/// Fill `(t,u)` with the mean of `X[t,v]` over the `k` most similar nodes `v`
/// observed at `t`. Entries without any usable neighbor fall back to
/// [`baseline_linear`].
pub fn baseline_knn(x: &NumArray, m: &NumArray, k: usize) -> crate::error::Result<NumArray> {
    check(x, m)?;
    if k == 0 {
        return Err(crate::error::PastError::InvalidConfig("knn needs k >= 1".into()));
    }
    let (t, n) = (x.rows(), x.cols());
    let linear = baseline_linear(x, m)?;
    let mut out = x.clone();
    for u in 0..n {
        let mut ranked: Vec<(f64, usize)> = (0..n)
            .filter(|&v| v != u)
            .filter_map(|v| node_distance(x, m, u, v).map(|d| (d, v)))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for i in 0..t {
            if m.get2(i, u) == 1.0 {
                continue;
            }
            let picked: Vec<f64> = ranked
                .iter()
                .filter(|(_, v)| m.get2(i, *v) == 1.0)
                .take(k)
                .map(|(_, v)| x.get2(i, *v))
                .collect();
            let v = if picked.is_empty() {
                linear.get2(i, u)
            } else {
                picked.iter().sum::<f64>() / picked.len() as f64
            };
            out.set2(i, u, v);
        }
    }
    Ok(out)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradMap, ParamStore};
use crate::error::{PastError, Result};

/// A scalar objective over a parameter store with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ParamStore) -> Result<f64>;
    fn value_and_grad(&self, params: &ParamStore) -> Result<(f64, GradMap)>;
}

/// Minimum number of coordinates probed when the store is large enough.
pub const MIN_PROBES: usize = 32;

/// Compare analytic gradients against central finite differences on randomly
/// sampled coordinates; returns the max of `|analytic - numeric| / max(1, |numeric|)`.
///
/// Stores with at most `probes` scalars are checked exhaustively.
pub fn grad_check(
    objective: &dyn Objective,
    params: &ParamStore,
    probe_eps: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let first = objective.value(params)?;
    let second = objective.value(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(PastError::NonDeterministic);
    }
    let (_, grads) = objective.value_and_grad(params)?;

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(path, p)| (0..p.value.len()).map(move |i| (path.clone(), i)))
        .collect();
    let probes = probes.max(MIN_PROBES);
    let chosen: Vec<&(String, usize)> = if coords.len() <= probes {
        coords.iter().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, coords.len(), probes)
            .into_iter()
            .map(|i| &coords[i])
            .collect()
    };

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for (path, idx) in chosen {
        let orig = work.value(path)?.data()[*idx];
        work.value_mut(path)?.data_mut()[*idx] = orig + probe_eps;
        let plus = objective.value(&work)?;
        work.value_mut(path)?.data_mut()[*idx] = orig - probe_eps;
        let minus = objective.value(&work)?;
        work.value_mut(path)?.data_mut()[*idx] = orig;
        let numeric = (plus - minus) / (2.0 * probe_eps);
        let analytic = grads.get(path).map(|g| g[*idx]).unwrap_or(0.0);
        let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Wraps a closure pair as an [`Objective`].
pub struct FnObjective<F, G>
where
    F: Fn(&ParamStore) -> Result<f64>,
    G: Fn(&ParamStore) -> Result<(f64, GradMap)>,
{
    pub value: F,
    pub grad: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&ParamStore) -> Result<f64>,
    G: Fn(&ParamStore) -> Result<(f64, GradMap)>,
{
    fn value(&self, params: &ParamStore) -> Result<f64> {
        (self.value)(params)
    }

    fn value_and_grad(&self, params: &ParamStore) -> Result<(f64, GradMap)> {
        (self.grad)(params)
    }
}

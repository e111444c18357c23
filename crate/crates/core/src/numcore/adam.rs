use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumArray, ParamStore};
use crate::error::{PastError, Result};

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: BTreeMap<String, NumArray>,
    pub second_moment: BTreeMap<String, NumArray>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Update every parameter from its accumulated gradient, then zero the
    /// accumulators.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        self.step_filtered(params, |_| true)
    }

    /// Like [`AdamState::step`], but only parameters accepted by `select` are
    /// updated. Gradients of all parameters are zeroed.
    pub fn step_filtered(
        &mut self,
        params: &mut ParamStore,
        select: impl Fn(&str) -> bool,
    ) -> Result<()> {
        for (path, p) in params.iter() {
            if select(path) && !p.grad.all_finite() {
                return Err(PastError::NonFiniteGradient(path.clone()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        for (path, p) in params.iter_mut() {
            if select(path) {
                let m = self
                    .first_moment
                    .entry(path.clone())
                    .or_insert_with(|| NumArray::zeros(p.value.shape()));
                let v = self
                    .second_moment
                    .entry(path.clone())
                    .or_insert_with(|| NumArray::zeros(p.value.shape()));
                let grads = p.grad.data();
                let values = p.value.data_mut();
                for i in 0..values.len() {
                    let g = grads[i];
                    let mi = &mut m.data_mut()[i];
                    *mi = b1 * *mi + (1.0 - b1) * g;
                    let mhat = *mi / bc1;
                    let vi = &mut v.data_mut()[i];
                    *vi = b2 * *vi + (1.0 - b2) * g * g;
                    let vhat = *vi / bc2;
                    values[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Init;

    fn scalar_store(v: f64) -> ParamStore {
        let mut ps = ParamStore::new(0);
        ps.insert("x", NumArray::scalar(v)).unwrap();
        ps
    }

    fn set_grad(ps: &mut ParamStore, g: f64) {
        ps.param_mut("x").unwrap().grad.data_mut()[0] = g;
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut ps = ParamStore::new(3);
        ps.register("w", &[4, 4], Init::FanIn(4)).unwrap();
        let before = ps.clone();
        let mut adam = AdamState::new(0.1);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = scalar_store(0.0);
        set_grad(&mut ps, 1.0);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut ps).unwrap();
        let x = ps.value("x").unwrap().data()[0];
        // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
        assert!((x + 0.1).abs() < 1e-8, "x = {x}");
        assert_eq!(ps.grad("x").unwrap().data()[0], 0.0);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut ps = scalar_store(0.0);
        let mut adam = AdamState::new(0.1);
        let mut prev = 0.0;
        for _ in 0..2 {
            set_grad(&mut ps, 1.0);
            adam.step(&mut ps).unwrap();
            let x = ps.value("x").unwrap().data()[0];
            assert!(x < prev);
            prev = x;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut ps = scalar_store(0.0);
        set_grad(&mut ps, f64::NAN);
        let err = AdamState::new(0.1).step(&mut ps).unwrap_err();
        assert!(matches!(err, PastError::NonFiniteGradient(ref p) if p == "x"));
        assert_eq!(ps.value("x").unwrap().data()[0], 0.0);
    }

    #[test]
    fn filtered_step_skips_unselected() {
        let mut ps = ParamStore::new(0);
        ps.insert("a", NumArray::scalar(1.0)).unwrap();
        ps.insert("b", NumArray::scalar(1.0)).unwrap();
        ps.param_mut("a").unwrap().grad.data_mut()[0] = 1.0;
        ps.param_mut("b").unwrap().grad.data_mut()[0] = 1.0;
        AdamState::new(0.1)
            .step_filtered(&mut ps, |p| p == "a")
            .unwrap();
        assert!(ps.value("a").unwrap().data()[0] < 1.0);
        assert_eq!(ps.value("b").unwrap().data()[0], 1.0);
        assert_eq!(ps.grad("b").unwrap().data()[0], 0.0);
    }

    proptest::proptest! {
        #[test]
        fn first_step_sign_is_scale_invariant(
            grads in proptest::collection::vec(-10.0f64..10.0, 1..8),
            scale in 0.01f64..100.0,
        ) {
            let run = |s: f64| {
                let mut ps = ParamStore::new(0);
                ps.insert("w", NumArray::zeros(&[grads.len()])).unwrap();
                for (g, v) in ps.param_mut("w").unwrap().grad.data_mut().iter_mut().zip(&grads) {
                    *g = s * v;
                }
                AdamState::new(0.01).step(&mut ps).unwrap();
                ps.value("w").unwrap().data().iter().map(|v| v.signum() as i8 * (*v != 0.0) as i8).collect::<Vec<_>>()
            };
            proptest::prop_assert_eq!(run(1.0), run(scale));
        }
    }
}

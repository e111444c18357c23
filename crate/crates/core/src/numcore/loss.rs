use super::NumArray;
use crate::error::{PastError, Result};

/// Mean squared error over the entries where `mask == 1`.
pub fn masked_mse(pred: &NumArray, target: &NumArray, mask: &NumArray) -> Result<f64> {
    let (sse, count) = masked_sse(pred, target, mask)?;
    if count == 0.0 {
        return Err(PastError::EmptyMask);
    }
    Ok(sse / count)
}

/// Loss value plus its gradient with respect to `pred`.
pub fn masked_mse_grad(
    pred: &NumArray,
    target: &NumArray,
    mask: &NumArray,
) -> Result<(f64, NumArray)> {
    let loss = masked_mse(pred, target, mask)?;
    let count: f64 = mask.data().iter().sum();
    let mut grad = NumArray::zeros(pred.shape());
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        *g = 2.0 * mask.data()[i] * (pred.data()[i] - target.data()[i]) / count;
    }
    Ok((loss, grad))
}

fn masked_sse(pred: &NumArray, target: &NumArray, mask: &NumArray) -> Result<(f64, f64)> {
    if !pred.same_shape(target) || !pred.same_shape(mask) {
        return Err(PastError::Shape(format!(
            "masked_mse: pred {:?}, target {:?}, mask {:?}",
            pred.shape(),
            target.shape(),
            mask.shape()
        )));
    }
    let (p, t, m) = (pred.data(), target.data(), mask.data());
    let mut sse = 0.0;
    let mut count = 0.0;
    for i in 0..p.len() {
        let d = p[i] - t[i];
        sse += m[i] * d * d;
        count += m[i];
    }
    Ok((sse, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arr(v: &[f64]) -> NumArray {
        NumArray::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let p = arr(&[1.0, -2.0, 3.5]);
        assert_eq!(masked_mse(&p, &p, &arr(&[1.0, 0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn single_entry_mean() {
        let v = masked_mse(&arr(&[1.0, 2.0]), &arr(&[0.0, 0.0]), &arr(&[1.0, 0.0])).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn hand_arithmetic() {
        let v = masked_mse(
            &arr(&[1.0, 2.0, 3.0]),
            &arr(&[0.0, 0.0, 0.0]),
            &arr(&[1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!((v - 14.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_errors() {
        let p = arr(&[1.0]);
        assert!(matches!(
            masked_mse(&p, &p, &arr(&[0.0])),
            Err(PastError::EmptyMask)
        ));
    }

    proptest! {
        #[test]
        fn joint_permutation_invariance(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0u8..2), 1..20),
            rot in 0usize..20,
        ) {
            prop_assume!(rows.iter().any(|r| r.2 == 1));
            let split = |rs: &[(f64, f64, u8)]| {
                (arr(&rs.iter().map(|r| r.0).collect::<Vec<_>>()),
                 arr(&rs.iter().map(|r| r.1).collect::<Vec<_>>()),
                 arr(&rs.iter().map(|r| r.2 as f64).collect::<Vec<_>>()))
            };
            let (p, t, m) = split(&rows);
            let mut shuffled = rows.clone();
            shuffled.rotate_left(rot % rows.len());
            shuffled.reverse();
            let (p2, t2, m2) = split(&shuffled);
            let a = masked_mse(&p, &t, &m).unwrap();
            let b = masked_mse(&p2, &t2, &m2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

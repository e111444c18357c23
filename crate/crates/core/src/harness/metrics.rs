use crate::error::{PastError, Result};
use crate::numcore::NumArray;

/// RMSE and MAE over the entries where `eval_mask == 1`.
pub fn rmse_mae(pred: &NumArray, truth: &NumArray, eval_mask: &NumArray) -> Result<(f64, f64)> {
    truth.expect_shape(pred.shape(), "truth")?;
    eval_mask.expect_shape(pred.shape(), "evaluation mask")?;
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for i in 0..pred.len() {
        if eval_mask.data()[i] == 1.0 {
            let e = pred.data()[i] - truth.data()[i];
            se += e * e;
            ae += e.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(PastError::EmptyMask);
    }
    Ok(((se / count as f64).sqrt(), ae / count as f64))
}

use super::{split_index, TimeFeatures, TrafficDataset};
use crate::error::{PastError, Result};
use crate::masking::MaskMatrix;
use crate::numcore::NumArray;

/// One model input: `L` consecutive steps of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: NumArray,
    pub mask: NumArray,
    pub time: Vec<TimeFeatures>,
    pub start: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Slice `[start, start + len)` out of a dataset and an aligned mask.
    pub fn extract(ds: &TrafficDataset, mask: &MaskMatrix, start: usize, len: usize) -> Result<Self> {
        let (t, n) = (ds.n_steps(), ds.n_nodes());
        mask.bits().expect_shape(&[t, n], "window mask")?;
        if start + len > t {
            return Err(PastError::Index(format!(
                "window [{start}, {}) outside [0, {t})",
                start + len
            )));
        }
        let span = start * n..(start + len) * n;
        Ok(Self {
            values: NumArray::from_vec(&[len, n], ds.values.data()[span.clone()].to_vec())?,
            mask: NumArray::from_vec(&[len, n], mask.bits().data()[span].to_vec())?,
            time: (start..start + len)
                .map(|i| ds.time_features_at(i))
                .collect::<Result<_>>()?,
            start,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Window>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Windows of length `len` at `stride` lying fully inside `[lo, hi)`.
    pub fn strided(
        ds: &TrafficDataset,
        mask: &MaskMatrix,
        lo: usize,
        hi: usize,
        len: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 || len == 0 {
            return Err(PastError::InvalidConfig("window length and stride must be >= 1".into()));
        }
        let mut windows = Vec::new();
        let mut start = lo;
        while start + len <= hi {
            windows.push(Window::extract(ds, mask, start, len)?);
            start += stride;
        }
        Ok(Self { windows })
    }

    /// Windows that jointly cover `[lo, hi)`: stride `len`, plus one window
    /// flush with `hi` when the span is not a multiple of `len`.
    pub fn covering(
        ds: &TrafficDataset,
        mask: &MaskMatrix,
        lo: usize,
        hi: usize,
        len: usize,
    ) -> Result<Self> {
        let mut batch = Self::strided(ds, mask, lo, hi, len, len)?;
        let covered = lo + batch.len() * len;
        if covered < hi && hi - lo >= len {
            batch.windows.push(Window::extract(ds, mask, hi - len, len)?);
        }
        Ok(batch)
    }
}

/// Split the time axis at `floor(train_fraction * T)` and window each side.
pub fn window_split(
    ds: &TrafficDataset,
    len: usize,
    stride: usize,
    train_fraction: f64,
    mask: &MaskMatrix,
) -> Result<(WindowBatch, WindowBatch)> {
    let t = ds.n_steps();
    if len > t {
        return Err(PastError::InvalidConfig(format!(
            "window length {len} exceeds series length {t}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(PastError::InvalidConfig(format!(
            "train_fraction {train_fraction} not in (0, 1]"
        )));
    }
    let split = split_index(t, train_fraction);
    let train = WindowBatch::strided(ds, mask, 0, split, len, stride)?;
    let test = WindowBatch::strided(ds, mask, split, t, len, stride)?;
    if train.is_empty() {
        log::warn!("training span of {split} steps is shorter than window length {len}");
    }
    if test.is_empty() && split < t {
        log::warn!("test span of {} steps is shorter than window length {len}", t - split);
    }
    Ok((train, test))
}

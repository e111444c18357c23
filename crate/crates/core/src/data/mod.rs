//! Traffic datasets: synthesis, ingestion, resampling, normalization,
//! calendar features, spatial adjacency and windowing.

mod adjacency;
mod io;
mod synth;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{PastError, Result};
use crate::masking::MaskMatrix;
use crate::numcore::NumArray;

pub use adjacency::build_spatial_adjacency;
pub use io::{read_graph_json, read_values_csv, write_graph_json, write_values_csv, GraphFile};
pub use synth::{synthesize_dataset, SynthConfig};
pub use window::{window_split, Window, WindowBatch};

pub const MINUTES_PER_WEEK: u64 = 7 * 24 * 60;

/// Calendar anchor of the first time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CalendarAnchor {
    pub week: u32,
    pub hour: u32,
    pub minute: u32,
}

impl CalendarAnchor {
    pub fn validate(&self) -> Result<()> {
        if self.week > 6 || self.hour > 23 || self.minute > 59 {
            return Err(PastError::InvalidConfig(format!(
                "calendar anchor out of range: {self:?}"
            )));
        }
        Ok(())
    }

    fn minute_of_week(&self) -> u64 {
        (self.week as u64 * 24 + self.hour as u64) * 60 + self.minute as u64
    }
}

/// Week day, hour and 15-minute bucket of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeFeatures {
    pub week: usize,
    pub hour: usize,
    pub minute_bucket: usize,
}

/// Edge of the road graph with a non-negative distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Dataset-level z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub const STD_FLOOR: f64 = 1e-8;

/// Complete ground-truth grid (time × nodes) plus graph and calendar metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficDataset {
    pub values: NumArray,
    pub start: CalendarAnchor,
    pub step_minutes: u32,
    pub node_ids: Vec<String>,
    pub edges: Vec<Edge>,
    pub norm_stats: Option<NormStats>,
}

impl TrafficDataset {
    pub fn new(
        values: NumArray,
        start: CalendarAnchor,
        step_minutes: u32,
        node_ids: Vec<String>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let ds = Self {
            values,
            start,
            step_minutes,
            node_ids,
            edges,
            norm_stats: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_steps(&self) -> usize {
        self.values.rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.shape().len() != 2 {
            return Err(PastError::Shape(format!(
                "values must be 2-D, got {:?}",
                self.values.shape()
            )));
        }
        if !self.values.all_finite() {
            return Err(PastError::InvalidConfig(
                "values contain NaN or infinite entries".into(),
            ));
        }
        if self.step_minutes == 0 {
            return Err(PastError::InvalidConfig("step_minutes must be > 0".into()));
        }
        self.start.validate()?;
        let n = self.n_nodes();
        if self.node_ids.len() != n {
            return Err(PastError::Shape(format!(
                "{} node ids for {} value columns",
                self.node_ids.len(),
                n
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.node_ids.iter().all(|id| seen.insert(id)) {
            return Err(PastError::InvalidConfig("node ids are not unique".into()));
        }
        for e in &self.edges {
            if e.i >= n || e.j >= n {
                return Err(PastError::Index(format!(
                    "edge ({}, {}) outside [0, {n})",
                    e.i, e.j
                )));
            }
            if e.distance < 0.0 || !e.distance.is_finite() {
                return Err(PastError::InvalidConfig(format!(
                    "edge ({}, {}) has invalid distance {}",
                    e.i, e.j, e.distance
                )));
            }
        }
        Ok(())
    }

    /// Spatial adjacency of this dataset's road graph.
    pub fn adjacency(&self) -> Result<NumArray> {
        let triples: Vec<_> = self.edges.iter().map(|e| (e.i, e.j, e.distance)).collect();
        build_spatial_adjacency(self.n_nodes(), &triples)
    }

    pub fn time_features_at(&self, step_index: usize) -> Result<TimeFeatures> {
        if step_index >= self.n_steps() {
            return Err(PastError::Index(format!(
                "step {step_index} outside [0, {})",
                self.n_steps()
            )));
        }
        Ok(time_features(self.start, self.step_minutes, step_index))
    }

    /// Z-score the grid using observed entries of the leading training span.
    pub fn normalize(&self, train_fraction: f64, mask: &MaskMatrix) -> Result<TrafficDataset> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(PastError::InvalidConfig(format!(
                "train_fraction {train_fraction} not in (0, 1]"
            )));
        }
        mask.bits()
            .expect_shape(self.values.shape(), "normalize mask")?;
        let split = split_index(self.n_steps(), train_fraction);
        let n = self.n_nodes();
        let span = split * n;
        let (vals, bits) = (&self.values.data()[..span], &mask.bits().data()[..span]);
        let count: f64 = bits.iter().sum();
        if count == 0.0 {
            return Err(PastError::NoObserved);
        }
        let rough = vals.iter().zip(bits).map(|(v, m)| v * m).sum::<f64>() / count;
        // second pass removes the rounding error of the first
        let mean = rough + vals.iter().zip(bits).map(|(v, m)| m * (v - rough)).sum::<f64>() / count;
        let var = vals
            .iter()
            .zip(bits)
            .map(|(v, m)| m * (v - mean).powi(2))
            .sum::<f64>()
            / count;
        let stats = NormStats {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        };
        let mut out = self.clone();
        out.values = self.values.map(|v| stats.apply(v));
        out.norm_stats = Some(stats);
        Ok(out)
    }

    /// Undo [`TrafficDataset::normalize`]; identity when no statistics are attached.
    pub fn denormalize(&self) -> TrafficDataset {
        let mut out = self.clone();
        if let Some(stats) = self.norm_stats {
            out.values = self.values.map(|z| stats.invert(z));
            out.norm_stats = None;
        }
        out
    }

    /// Average non-overlapping windows of `target_minutes / step_minutes` steps.
    pub fn downsample_window_average(&self, target_minutes: u32) -> Result<TrafficDataset> {
        if target_minutes == 0 || !target_minutes.is_multiple_of(self.step_minutes) {
            return Err(PastError::InvalidConfig(format!(
                "target interval {target_minutes} is not a positive multiple of {}",
                self.step_minutes
            )));
        }
        let k = (target_minutes / self.step_minutes) as usize;
        let n = self.n_nodes();
        let out_steps = self.n_steps() / k;
        let mut values = NumArray::zeros(&[out_steps, n]);
        for o in 0..out_steps {
            let row = values.row_mut(o);
            for s in 0..k {
                for (acc, v) in row.iter_mut().zip(self.values.row(o * k + s)) {
                    *acc += v;
                }
            }
            row.iter_mut().for_each(|v| *v /= k as f64);
        }
        let mut out = self.clone();
        out.values = values;
        out.step_minutes = target_minutes;
        Ok(out)
    }
}

/// Calendar features `step_index` steps after `start` on a cyclic 7-day week.
pub fn time_features(start: CalendarAnchor, step_minutes: u32, step_index: usize) -> TimeFeatures {
    let minute =
        (start.minute_of_week() + step_index as u64 * step_minutes as u64) % MINUTES_PER_WEEK;
    TimeFeatures {
        week: (minute / (24 * 60)) as usize,
        hour: ((minute / 60) % 24) as usize,
        minute_bucket: ((minute % 60) / 15) as usize,
    }
}

/// First index of the held-out span, `floor(fraction * total)`.
pub fn split_index(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64).floor() as usize).min(total)
}

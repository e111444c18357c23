use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PastModel, WindowLoss};
use crate::data::WindowBatch;
use crate::error::{PastError, Result};
use crate::exec::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `(w1, w2)` weights of the primary and auxiliary losses.
    pub loss_weights: (f64, f64),
    /// Stop after this many epochs without a new best monitored loss.
    pub patience: Option<usize>,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            loss_weights: (1.0, 1.0),
            patience: Some(10),
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(PastError::InvalidConfig(format!(
                "lr and batch_size must be positive (got {}, {})",
                self.lr, self.batch_size
            )));
        }
        let (w1, w2) = self.loss_weights;
        if !(w1 >= 0.0 && w2 >= 0.0 && w1.is_finite() && w2.is_finite()) {
            return Err(PastError::InvalidConfig(format!("loss weights ({w1}, {w2}) must be non-negative")));
        }
        Ok(())
    }
}

/// Mean losses over the observed entries seen in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss1: f64,
    pub loss2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.stopped_early == other.stopped_early
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch && a.loss1.to_bits() == b.loss1.to_bits() && a.loss2.to_bits() == b.loss2.to_bits()
            })
    }
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-batch totals after the ordered reduction.
pub(crate) struct BatchTotals {
    pub sse1: f64,
    pub sse2: f64,
    pub count: f64,
}

impl PastModel {
    /// Evaluate a batch of windows and load the mean gradient into the
    /// parameter accumulators. Windows are evaluated under `exec` and reduced
    /// in index order.
    pub(crate) fn accumulate_batch(
        &mut self,
        batch: &[&crate::data::Window],
        weights: (f64, f64),
        dropout_seeds: Option<&[u64]>,
        exec: Execution,
    ) -> Result<BatchTotals> {
        let results: Vec<Result<WindowLoss>> = {
            let this = &*self;
            map_indexed(exec, batch.len(), |k| {
                this.window_loss(&this.params, batch[k], weights, dropout_seeds.map(|s| s[k]))
            })
        };
        let mut losses = Vec::with_capacity(results.len());
        for r in results {
            losses.push(r?);
        }
        let count: f64 = losses.iter().map(|l| l.count).sum();
        let totals = BatchTotals {
            sse1: losses.iter().map(|l| l.sse1).sum(),
            sse2: losses.iter().map(|l| l.sse2).sum(),
            count,
        };
        self.params.zero_grads();
        if count > 0.0 {
            for l in &losses {
                self.params.accumulate(&l.grads, 1.0 / count)?;
            }
        }
        Ok(totals)
    }

    /// Mean-gradient of one batch of windows, for benchmarking and tests.
    pub fn batch_gradient(
        &mut self,
        windows: &WindowBatch,
        weights: (f64, f64),
        exec: Execution,
    ) -> Result<crate::numcore::GradMap> {
        let refs: Vec<_> = windows.windows.iter().collect();
        self.accumulate_batch(&refs, weights, None, exec)?;
        Ok(self.params.grads())
    }

    /// Train on `windows`. Each batch updates only the modules whose loss
    /// weight is non-zero; the auxiliary target and the injected features are
    /// held constant.
    pub fn train(&mut self, windows: &WindowBatch, cfg: &TrainConfig) -> Result<TrainHistory> {
        cfg.validate()?;
        let mut history = TrainHistory::default();
        if cfg.epochs == 0 {
            return Ok(history);
        }
        if windows.is_empty() {
            return Err(PastError::InvalidConfig("no training windows".into()));
        }
        self.optimizer.lr = cfg.lr;
        let (w1, w2) = cfg.loss_weights;
        let select = |path: &str| (w1 != 0.0 && path.starts_with("gim/")) || (w2 != 0.0 && path.starts_with("cgm/"));
        let use_dropout = self.config.p_dropout > 0.0 && self.config.variant.has_gim();
        let monitor_primary = self.config.variant.has_gim();

        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch as u64, 0));
            order.sort_unstable();
            order.shuffle(&mut rng);
            let (mut sse1, mut sse2, mut count) = (0.0, 0.0, 0.0);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<_> = chunk.iter().map(|&i| &windows.windows[i]).collect();
                let seeds: Vec<u64> = chunk
                    .iter()
                    .map(|&i| stream_seed(cfg.seed, epoch as u64 + 1, i as u64))
                    .collect();
                let t = self.accumulate_batch(&batch, cfg.loss_weights, use_dropout.then_some(&seeds[..]), cfg.execution)?;
                if t.count == 0.0 {
                    log::warn!("epoch {epoch} batch {b}: no observed entries, skipped");
                    continue;
                }
                let (l1, l2) = (t.sse1 / t.count, t.sse2 / t.count);
                let diverged = |_| PastError::Divergence { epoch, batch: b, loss1: l1, loss2: l2 };
                if !l1.is_finite() || !l2.is_finite() {
                    return Err(diverged(()));
                }
                self.optimizer.step_filtered(&mut self.params, select).map_err(|e| match e {
                    PastError::NonFiniteGradient(_) => diverged(()),
                    other => other,
                })?;
                sse1 += t.sse1;
                sse2 += t.sse2;
                count += t.count;
            }
            if count == 0.0 {
                return Err(PastError::NoObserved);
            }
            let stats = EpochStats { epoch, loss1: sse1 / count, loss2: sse2 / count };
            log::info!("epoch {epoch}: loss1={:.6} loss2={:.6}", stats.loss1, stats.loss2);
            history.epochs.push(stats);

            let monitored = if monitor_primary { stats.loss1 } else { stats.loss2 };
            if monitored < best {
                best = monitored;
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    history.stopped_early = true;
                    break;
                }
            }
        }
        Ok(history)
    }
}

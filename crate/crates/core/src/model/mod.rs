//! The full imputation network: graph-integrated primary module plus
//! cross-gated auxiliary module, fused additively on missing entries.

pub(crate) mod checkpoint;
mod train;

use serde::{Deserialize, Serialize};

use crate::cgm::{cgm_backward, cgm_forward, register_cgm_params, CgmConfig, CgmForward, TimePartition};
use crate::data::{NormStats, TimeFeatures, TrafficDataset, Window, WindowBatch};
use crate::error::{PastError, Result};
use crate::gim::{
    build_spatial_operator, dropout_beta, gim_backward, gim_forward, register_gim_params, DropoutSpec, GimConfig,
    GimForward, SpatialOperator,
};
use crate::masking::MaskMatrix;
use crate::numcore::{AdamState, GradMap, NumArray, Objective, ParamStore};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{EpochStats, TrainConfig, TrainHistory};

/// Which modules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Primary module alone; no injection vertex, `Y_CGM = 0`.
    WithoutCgm,
    /// Auxiliary module alone, fitted to the data directly; `Y_GIM = 0`.
    WithoutGim,
}

impl Variant {
    pub fn has_gim(self) -> bool {
        self != Variant::WithoutGim
    }

    pub fn has_cgm(self) -> bool {
        self != Variant::WithoutCgm
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutCgm => "without_cgm",
            Variant::WithoutGim => "without_gim",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "without_cgm" => Ok(Variant::WithoutCgm),
            "without_gim" => Ok(Variant::WithoutGim),
            _ => Err(PastError::Parse(format!("unknown variant `{s}`"))),
        }
    }
}

/// Target the auxiliary module is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSign {
    /// `X − Y_GIM`, consistent with additive fusion.
    #[default]
    DataMinusGim,
    /// `Y_GIM − X`.
    GimMinusData,
}

impl ResidualSign {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualSign::DataMinusGim => "data_minus_gim",
            ResidualSign::GimMinusData => "gim_minus_data",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "data_minus_gim" => Ok(ResidualSign::DataMinusGim),
            "gim_minus_data" => Ok(ResidualSign::GimMinusData),
            _ => Err(PastError::Parse(format!("unknown residual sign `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PastConfig {
    pub seq_len: usize,
    pub n_nodes: usize,
    pub d: usize,
    pub n_layers: usize,
    pub k_order: usize,
    pub alpha: f64,
    pub p_dropout: f64,
    pub variant: Variant,
    pub residual: ResidualSign,
    pub partition: Option<TimePartition>,
    /// See [`GimConfig::edge_decay`].
    pub edge_decay: f64,
}

impl Default for PastConfig {
    fn default() -> Self {
        Self {
            seq_len: 96,
            n_nodes: 0,
            d: 64,
            n_layers: 3,
            k_order: 2,
            alpha: 0.1,
            p_dropout: 0.1,
            variant: Variant::Full,
            residual: ResidualSign::DataMinusGim,
            partition: None,
            edge_decay: 4.0,
        }
    }
}

impl PastConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PastError::InvalidConfig(msg));
        if self.seq_len == 0 || self.n_nodes == 0 || self.d == 0 {
            return bad(format!(
                "seq_len, n_nodes and d must be positive (got {}, {}, {})",
                self.seq_len, self.n_nodes, self.d
            ));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if !(self.edge_decay >= 0.0 && self.edge_decay.is_finite()) {
            return bad(format!("edge_decay {} must be finite and non-negative", self.edge_decay));
        }
        if !(0.0..1.0).contains(&self.p_dropout) || !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("dropout settings alpha={} p={} out of range", self.alpha, self.p_dropout));
        }
        self.cgm_config().validate()
    }

    pub fn gim_config(&self) -> GimConfig {
        GimConfig {
            seq_len: self.seq_len,
            n_nodes: self.n_nodes,
            d: self.d,
            n_layers: self.n_layers,
            k_order: self.k_order,
            inject: self.variant == Variant::Full,
            edge_decay: self.edge_decay,
        }
    }

    pub fn cgm_config(&self) -> CgmConfig {
        let mut c = CgmConfig::new(self.seq_len, self.n_nodes, self.d, self.n_layers);
        if let Some(p) = self.partition {
            c.partition = p;
        }
        c
    }
}

/// `M⊙X + (1−M)⊙(Y_GIM + Y_CGM)`.
pub fn fuse(x: &NumArray, m: &NumArray, y_gim: &NumArray, y_cgm: &NumArray) -> Result<NumArray> {
    for (a, what) in [(m, "mask"), (y_gim, "Y_GIM"), (y_cgm, "Y_CGM")] {
        a.expect_shape(x.shape(), what)?;
    }
    let mut out = NumArray::zeros(x.shape());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        *o = if m.data()[i] == 1.0 {
            x.data()[i]
        } else {
            y_gim.data()[i] + y_cgm.data()[i]
        };
    }
    Ok(out)
}

/// Target of the auxiliary module for the given sign convention.
pub fn residual_target(x: &NumArray, y_gim: &NumArray, sign: ResidualSign) -> NumArray {
    let mut r = x.clone();
    for (v, g) in r.data_mut().iter_mut().zip(y_gim.data()) {
        *v = match sign {
            ResidualSign::DataMinusGim => *v - g,
            ResidualSign::GimMinusData => g - *v,
        };
    }
    r
}

/// `(loss1, loss2)`: primary fit to observed data, auxiliary fit to the
/// primary module's residual (a constant target).
pub fn compute_losses(
    x: &NumArray,
    m: &NumArray,
    y_gim: &NumArray,
    y_cgm: &NumArray,
    sign: ResidualSign,
) -> Result<(f64, f64)> {
    let loss1 = crate::numcore::masked_mse(y_gim, x, m)?;
    let r = residual_target(x, y_gim, sign);
    let loss2 = crate::numcore::masked_mse(y_cgm, &r, m)?;
    Ok((loss1, loss2))
}

/// Both module outputs for one window, with the intermediates needed for
/// backpropagation.
pub struct WindowOutputs {
    pub y_gim: NumArray,
    pub y_cgm: NumArray,
    gim: Option<GimForward>,
    cgm: Option<CgmForward>,
}

/// Sums over one window's observed entries and the matching unnormalized
/// gradient of `w1·SSE1 + w2·SSE2`.
pub struct WindowLoss {
    pub sse1: f64,
    pub sse2: f64,
    pub count: f64,
    pub grads: GradMap,
}

#[derive(Debug, Clone)]
pub struct PastModel {
    pub config: PastConfig,
    pub params: ParamStore,
    pub adjacency: NumArray,
    pub norm_stats: Option<NormStats>,
    pub optimizer: AdamState,
    spatial: SpatialOperator,
    beta: f64,
}

impl PartialEq for PastModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.adjacency.bit_eq(&other.adjacency)
            && self.norm_stats == other.norm_stats
            && self.optimizer == other.optimizer
    }
}

impl PastModel {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: PastConfig, adjacency: &NumArray, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        config.validate()?;
        if config.variant.has_gim() {
            register_gim_params(&mut params, &config.gim_config())?;
        }
        if config.variant.has_cgm() {
            register_cgm_params(&mut params, &config.cgm_config())?;
        }
        Self::from_parts(config, params, adjacency.clone(), None, AdamState::new(1e-4))
    }

    pub(crate) fn from_parts(
        mut config: PastConfig,
        params: ParamStore,
        adjacency: NumArray,
        norm_stats: Option<NormStats>,
        optimizer: AdamState,
    ) -> Result<Self> {
        config.validate()?;
        config.partition = Some(config.cgm_config().partition);
        adjacency.expect_shape(&[config.n_nodes, config.n_nodes], "spatial adjacency")?;
        let spatial = build_spatial_operator(&adjacency, config.k_order)?;
        let beta = dropout_beta(config.alpha, config.p_dropout, config.seq_len);
        Ok(Self { config, params, adjacency, norm_stats, optimizer, spatial, beta })
    }

    pub fn spatial_operator(&self) -> &SpatialOperator {
        &self.spatial
    }

    /// Intercept of the drop-probability curve matching `p_dropout`.
    pub fn dropout_beta(&self) -> f64 {
        self.beta
    }

    fn check_window(&self, x: &NumArray, m: &NumArray, time: &[TimeFeatures]) -> Result<()> {
        let shape = [self.config.seq_len, self.config.n_nodes];
        x.expect_shape(&shape, "window values")?;
        m.expect_shape(&shape, "window mask")?;
        if let Some(v) = m.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(PastError::InvalidConfig(format!("mask entry {v} is not 0 or 1")));
        }
        if time.len() != self.config.seq_len {
            return Err(PastError::Shape(format!(
                "{} time features for window length {}",
                time.len(),
                self.config.seq_len
            )));
        }
        Ok(())
    }

    /// Run both modules under `params`. `dropout_seed` enables edge dropout.
    pub fn forward_with(
        &self,
        params: &ParamStore,
        x: &NumArray,
        m: &NumArray,
        time: &[TimeFeatures],
        dropout_seed: Option<u64>,
    ) -> Result<WindowOutputs> {
        self.check_window(x, m, time)?;
        let shape = [self.config.seq_len, self.config.n_nodes];
        let cgm = if self.config.variant.has_cgm() {
            Some(cgm_forward(&self.config.cgm_config(), params, time)?)
        } else {
            None
        };
        let gim = if self.config.variant.has_gim() {
            let external = match (&cgm, self.config.variant) {
                (Some(c), Variant::Full) => Some(c.pooled.as_slice()),
                _ => None,
            };
            let dropout = dropout_seed.map(|seed| DropoutSpec { alpha: self.config.alpha, beta: self.beta, seed });
            Some(gim_forward(&self.config.gim_config(), params, &self.spatial, x, m, external, dropout)?)
        } else {
            None
        };
        Ok(WindowOutputs {
            y_gim: gim.as_ref().map_or_else(|| NumArray::zeros(&shape), |g| g.y.clone()),
            y_cgm: cgm.as_ref().map_or_else(|| NumArray::zeros(&shape), |c| c.y.clone()),
            gim,
            cgm,
        })
    }

    /// Loss sums and gradients for one window; the residual target and the
    /// injected features are constants.
    pub fn window_loss(
        &self,
        params: &ParamStore,
        window: &Window,
        weights: (f64, f64),
        dropout_seed: Option<u64>,
    ) -> Result<WindowLoss> {
        let (x, m) = (&window.values, &window.mask);
        let out = self.forward_with(params, x, m, &window.time, dropout_seed)?;
        let r = residual_target(x, &out.y_gim, self.config.residual);
        let external = out.cgm.as_ref().filter(|_| self.config.variant == Variant::Full).map(|c| c.pooled.as_slice());
        self.loss_from_outputs(params, window, &out, &r, external, weights)
    }

    fn loss_from_outputs(
        &self,
        params: &ParamStore,
        window: &Window,
        out: &WindowOutputs,
        r: &NumArray,
        external: Option<&[NumArray]>,
        (w1, w2): (f64, f64),
    ) -> Result<WindowLoss> {
        let (x, m) = (&window.values, &window.mask);
        let shape = [self.config.seq_len, self.config.n_nodes];
        let mut dy1 = NumArray::zeros(&shape);
        let mut dy2 = NumArray::zeros(&shape);
        let (mut sse1, mut sse2, mut count) = (0.0, 0.0, 0.0);
        for i in 0..x.len() {
            if m.data()[i] != 1.0 {
                continue;
            }
            let e1 = out.y_gim.data()[i] - x.data()[i];
            let e2 = out.y_cgm.data()[i] - r.data()[i];
            sse1 += e1 * e1;
            sse2 += e2 * e2;
            count += 1.0;
            dy1.data_mut()[i] = 2.0 * w1 * e1;
            dy2.data_mut()[i] = 2.0 * w2 * e2;
        }
        let mut grads = GradMap::new();
        if let (Some(g), true) = (&out.gim, w1 != 0.0) {
            gim_backward(&self.config.gim_config(), params, &self.spatial, g, x, m, external, &dy1, &mut grads)?;
        }
        if let (Some(c), true) = (&out.cgm, w2 != 0.0) {
            cgm_backward(&self.config.cgm_config(), params, &window.time, c, &dy2, &mut grads)?;
        }
        Ok(WindowLoss { sse1, sse2, count, grads })
    }

    /// Fused imputation of one window with dropout off; observed entries pass
    /// through unchanged.
    pub fn impute(&self, x: &NumArray, m: &NumArray, time: &[TimeFeatures]) -> Result<NumArray> {
        let out = self.forward_with(&self.params, x, m, time, None)?;
        fuse(x, m, &out.y_gim, &out.y_cgm)
    }

    /// Impute steps `[lo, hi)` of a (normalized) dataset using covering
    /// windows; returns the `(hi−lo)×N` fused series.
    pub fn impute_span(&self, ds: &TrafficDataset, mask: &MaskMatrix, lo: usize, hi: usize) -> Result<NumArray> {
        let l = self.config.seq_len;
        if hi > ds.n_steps() || lo >= hi || hi - lo < l {
            return Err(PastError::InvalidConfig(format!(
                "span [{lo}, {hi}) cannot hold a window of length {l}"
            )));
        }
        let n = ds.n_nodes();
        let batch = WindowBatch::covering(ds, mask, lo, hi, l)?;
        let mut out = NumArray::zeros(&[hi - lo, n]);
        let mut filled = lo;
        for w in &batch.windows {
            let y = self.impute(&w.values, &w.mask, &w.time)?;
            for t in filled.max(w.start)..w.start + l {
                out.row_mut(t - lo).copy_from_slice(y.row(t - w.start));
            }
            filled = w.start + l;
        }
        Ok(out)
    }

    /// Objective over a single window for gradient checking. Dropout is off
    /// and the residual target and injected features are frozen at the
    /// model's current parameters, matching the training gradient.
    pub fn window_objective<'a>(&'a self, window: &'a Window, weights: (f64, f64)) -> Result<WindowObjective<'a>> {
        let out = self.forward_with(&self.params, &window.values, &window.mask, &window.time, None)?;
        let residual = residual_target(&window.values, &out.y_gim, self.config.residual);
        let external = out.cgm.map(|c| c.pooled);
        Ok(WindowObjective { model: self, window, weights, residual, external })
    }
}

/// See [`PastModel::window_objective`].
pub struct WindowObjective<'a> {
    model: &'a PastModel,
    window: &'a Window,
    weights: (f64, f64),
    residual: NumArray,
    external: Option<Vec<NumArray>>,
}

impl WindowObjective<'_> {
    fn outputs(&self, params: &ParamStore) -> Result<WindowOutputs> {
        let model = self.model;
        let cfg = &model.config;
        let w = self.window;
        let mut out = model.forward_with(params, &w.values, &w.mask, &w.time, None)?;
        if cfg.variant == Variant::Full {
            let g = gim_forward(
                &cfg.gim_config(),
                params,
                &model.spatial,
                &w.values,
                &w.mask,
                self.external.as_deref(),
                None,
            )?;
            out.y_gim = g.y.clone();
            out.gim = Some(g);
        }
        Ok(out)
    }

    fn total(&self, l: &WindowLoss) -> Result<f64> {
        if l.count == 0.0 {
            return Err(PastError::EmptyMask);
        }
        Ok((self.weights.0 * l.sse1 + self.weights.1 * l.sse2) / l.count)
    }
}

impl Objective for WindowObjective<'_> {
    fn value(&self, params: &ParamStore) -> Result<f64> {
        let out = self.outputs(params)?;
        let l = self.model.loss_from_outputs(params, self.window, &out, &self.residual, None, (0.0, 0.0))?;
        self.total(&l)
    }

    fn value_and_grad(&self, params: &ParamStore) -> Result<(f64, GradMap)> {
        let out = self.outputs(params)?;
        let ext = self.external.as_deref().filter(|_| self.model.config.variant == Variant::Full);
        let mut l = self.model.loss_from_outputs(params, self.window, &out, &self.residual, ext, self.weights)?;
        let v = self.total(&l)?;
        l.grads.scale(1.0 / l.count);
        Ok((v, l.grads))
    }
}

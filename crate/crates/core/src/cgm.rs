//! Cross-gated module: node and calendar embeddings refined by bidirectionally
//! gated projection layers.

use serde::{Deserialize, Serialize};

use crate::data::TimeFeatures;
use crate::error::{PastError, Result};
use crate::numcore::activation::{sigmoid, tanh};
use crate::numcore::linalg::{add_col_sums, axpy, dot, gemm};
use crate::numcore::{GradMap, Init, NumArray, ParamStore};

/// Split of the temporal embedding width across week, hour and minute tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimePartition {
    pub week: usize,
    pub hour: usize,
    pub minute: usize,
}

impl TimePartition {
    /// Quarter of `d` for week and minute, the rest for hour.
    pub fn for_width(d: usize) -> Self {
        let week = d / 4;
        let minute = d / 4;
        Self { week, hour: d - week - minute, minute }
    }

    pub fn total(&self) -> usize {
        self.week + self.hour + self.minute
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgmConfig {
    pub seq_len: usize,
    pub n_nodes: usize,
    pub d: usize,
    pub n_layers: usize,
    pub partition: TimePartition,
}

impl CgmConfig {
    pub fn new(seq_len: usize, n_nodes: usize, d: usize, n_layers: usize) -> Self {
        Self { seq_len, n_nodes, d, n_layers, partition: TimePartition::for_width(d) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partition.total() != self.d {
            return Err(PastError::InvalidConfig(format!(
                "time partition {:?} does not sum to d = {}",
                self.partition, self.d
            )));
        }
        if self.seq_len == 0 || self.n_nodes == 0 || self.d == 0 {
            return Err(PastError::InvalidConfig("CGM dimensions must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) mod paths {
    pub const NODE: &str = "cgm/embed/node";
    pub const WEEK: &str = "cgm/embed/week";
    pub const HOUR: &str = "cgm/embed/hour";
    pub const MINUTE: &str = "cgm/embed/minute";
    pub const HEAD_W: &str = "cgm/head/weight";
    pub const HEAD_B: &str = "cgm/head/bias";
    pub const GATE_NAMES: [&str; 4] = ["w_sp", "w_tp", "w_sg", "w_tg"];

    pub fn layer(i: usize, name: &str) -> String {
        format!("cgm/layer{i}/{name}")
    }
}

pub fn register_cgm_params(store: &mut ParamStore, cfg: &CgmConfig) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d;
    let p = cfg.partition;
    store.register(paths::NODE, &[cfg.n_nodes, d], Init::Normal(0.02))?;
    store.register(paths::WEEK, &[7, p.week], Init::Normal(0.02))?;
    store.register(paths::HOUR, &[24, p.hour], Init::Normal(0.02))?;
    store.register(paths::MINUTE, &[4, p.minute], Init::Normal(0.02))?;
    for i in 0..cfg.n_layers {
        for name in paths::GATE_NAMES {
            store.register(&paths::layer(i, name), &[d, d], Init::FanIn(d))?;
        }
    }
    store.register(paths::HEAD_W, &[2 * d], Init::FanIn(2 * d))?;
    store.register(paths::HEAD_B, &[1], Init::Zeros)?;
    Ok(())
}

/// Number of scalars in the four gate/projection matrices of layer `i`.
pub fn gate_param_count(store: &ParamStore, i: usize) -> Result<usize> {
    paths::GATE_NAMES
        .iter()
        .map(|name| store.value(&paths::layer(i, name)).map(|v| v.len()))
        .sum()
}

/// Borrowed view of the embedding tables.
pub struct EmbeddingTables<'a> {
    pub node: &'a NumArray,
    pub week: &'a NumArray,
    pub hour: &'a NumArray,
    pub minute: &'a NumArray,
}

impl<'a> EmbeddingTables<'a> {
    pub fn from_store(store: &'a ParamStore) -> Result<Self> {
        Ok(Self {
            node: store.value(paths::NODE)?,
            week: store.value(paths::WEEK)?,
            hour: store.value(paths::HOUR)?,
            minute: store.value(paths::MINUTE)?,
        })
    }

    fn lookup<'b>(table: &'b NumArray, idx: usize, what: &str) -> Result<&'b [f64]> {
        if idx >= table.rows() {
            return Err(PastError::Index(format!(
                "{what} index {idx} outside table of {} rows",
                table.rows()
            )));
        }
        Ok(table.row(idx))
    }

    pub fn node_vector(&self, node: usize) -> Result<Vec<f64>> {
        Ok(Self::lookup(self.node, node, "node")?.to_vec())
    }

    pub fn time_vector(&self, tf: &TimeFeatures) -> Result<Vec<f64>> {
        let mut v = Self::lookup(self.week, tf.week, "week")?.to_vec();
        v.extend_from_slice(Self::lookup(self.hour, tf.hour, "hour")?);
        v.extend_from_slice(Self::lookup(self.minute, tf.minute_bucket, "minute bucket")?);
        Ok(v)
    }
}

/// Spatial and temporal vectors of one node at one time step.
pub fn embed_external(node: usize, tf: &TimeFeatures, tables: &EmbeddingTables) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((tables.node_vector(node)?, tables.time_vector(tf)?))
}

/// The four `d×d` matrices of one cross-gated layer, row-major.
#[derive(Debug, Clone, Copy)]
pub struct GateWeights<'a> {
    pub w_sp: &'a [f64],
    pub w_tp: &'a [f64],
    pub w_sg: &'a [f64],
    pub w_tg: &'a [f64],
}

fn matvec(w: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..w.len() / d).map(|r| dot(&w[r * d..(r + 1) * d], v)).collect()
}

/// One cross-gated update of a single `(v_s, v_t)` pair.
pub fn cross_gate_layer(v_s: &[f64], v_t: &[f64], w: GateWeights) -> (Vec<f64>, Vec<f64>) {
    let sp = matvec(w.w_sp, v_s);
    let tp = matvec(w.w_tp, v_t);
    let sg = matvec(w.w_sg, v_s);
    let tg = matvec(w.w_tg, v_t);
    let s_out = (0..v_s.len()).map(|k| v_s[k] + sp[k] * sigmoid(sg[k]) * tanh(tg[k])).collect();
    let t_out = (0..v_t.len()).map(|k| v_t[k] + tp[k] * sigmoid(tg[k]) * tanh(sg[k])).collect();
    (s_out, t_out)
}

/// Time-mean of `concat(S_u[t], T_u[t])` over `l` aligned rows of width `d`.
pub fn pool_streams(s_u: &[f64], t_u: &[f64], l: usize, d: usize) -> Result<Vec<f64>> {
    if l == 0 || s_u.len() != l * d || t_u.len() != l * d {
        return Err(PastError::Shape(format!(
            "stream lengths {} / {} do not match {l}×{d}",
            s_u.len(),
            t_u.len()
        )));
    }
    let mut out = vec![0.0; 2 * d];
    for t in 0..l {
        axpy(1.0, &s_u[t * d..(t + 1) * d], &mut out[..d]);
        axpy(1.0, &t_u[t * d..(t + 1) * d], &mut out[d..]);
    }
    out.iter_mut().for_each(|v| *v /= l as f64);
    Ok(out)
}

/// Pooled streams mapped through a `d×2d` projection.
pub fn hidden_export(s_u: &[f64], t_u: &[f64], l: usize, d: usize, proj: &NumArray) -> Result<Vec<f64>> {
    proj.expect_shape(&[proj.rows(), 2 * d], "hidden projection")?;
    let pooled = pool_streams(s_u, t_u, l, d)?;
    Ok(matvec(proj.data(), &pooled))
}

struct LayerCache {
    s: Vec<f64>,
    t: Vec<f64>,
    sp: Vec<f64>,
    tp: Vec<f64>,
    sg: Vec<f64>,
    tg: Vec<f64>,
}

/// Output of [`cgm_forward`].
pub struct CgmForward {
    pub y: NumArray,
    /// Per layer, the `N×2d` time-mean of `concat(S, T)` after that layer.
    pub pooled: Vec<NumArray>,
    layers: Vec<LayerCache>,
    /// Final streams, position `t·N + u`.
    s_last: Vec<f64>,
    t_last: Vec<f64>,
}

impl CgmForward {
    /// Spatial and temporal streams after the last layer, position `t·N + u`.
    pub fn streams(&self) -> (&[f64], &[f64]) {
        (&self.s_last, &self.t_last)
    }
}

fn check_time(cfg: &CgmConfig, time: &[TimeFeatures]) -> Result<()> {
    if time.len() != cfg.seq_len {
        return Err(PastError::Shape(format!(
            "{} time features for window length {}",
            time.len(),
            cfg.seq_len
        )));
    }
    Ok(())
}

fn gate_weights(params: &ParamStore, i: usize) -> Result<[&[f64]; 4]> {
    let get = |k: usize| params.value(&paths::layer(i, paths::GATE_NAMES[k])).map(|v| v.data());
    Ok([get(0)?, get(1)?, get(2)?, get(3)?])
}

/// Run the module for one window. Consumes only node identities and
/// calendar features, never data values.
pub fn cgm_forward(cfg: &CgmConfig, params: &ParamStore, time: &[TimeFeatures]) -> Result<CgmForward> {
    cfg.validate()?;
    check_time(cfg, time)?;
    let (l, n, d) = (cfg.seq_len, cfg.n_nodes, cfg.d);
    let tables = EmbeddingTables::from_store(params)?;
    tables.node.expect_shape(&[n, d], "node embedding table")?;
    let positions = l * n;

    let mut s = vec![0.0; positions * d];
    let mut t_stream = vec![0.0; positions * d];
    for (ti, tf) in time.iter().enumerate() {
        let tv = tables.time_vector(tf)?;
        for u in 0..n {
            let p = ti * n + u;
            s[p * d..(p + 1) * d].copy_from_slice(tables.node.row(u));
            t_stream[p * d..(p + 1) * d].copy_from_slice(&tv);
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut pooled = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let [w_sp, w_tp, w_sg, w_tg] = gate_weights(params, i)?;
        let project = |src: &[f64], w: &[f64]| {
            let mut out = vec![0.0; positions * d];
            gemm(positions, d, d, src, false, w, true, &mut out, false);
            out
        };
        let sp = project(&s, w_sp);
        let tp = project(&t_stream, w_tp);
        let sg = project(&s, w_sg);
        let tg = project(&t_stream, w_tg);
        let mut s_next = s.clone();
        let mut t_next = t_stream.clone();
        for k in 0..positions * d {
            s_next[k] += sp[k] * sigmoid(sg[k]) * tanh(tg[k]);
            t_next[k] += tp[k] * sigmoid(tg[k]) * tanh(sg[k]);
        }
        layers.push(LayerCache { s, t: t_stream, sp, tp, sg, tg });
        s = s_next;
        t_stream = t_next;

        let mut pool = NumArray::zeros(&[n, 2 * d]);
        for ti in 0..l {
            for u in 0..n {
                let p = ti * n + u;
                let row = pool.row_mut(u);
                axpy(1.0, &s[p * d..(p + 1) * d], &mut row[..d]);
                axpy(1.0, &t_stream[p * d..(p + 1) * d], &mut row[d..]);
            }
        }
        pool.data_mut().iter_mut().for_each(|v| *v /= l as f64);
        pooled.push(pool);
    }

    let hw = params.value(paths::HEAD_W)?.data();
    let hb = params.value(paths::HEAD_B)?.data()[0];
    let mut y = NumArray::zeros(&[l, n]);
    for ti in 0..l {
        for u in 0..n {
            let p = ti * n + u;
            let v = dot(&s[p * d..(p + 1) * d], &hw[..d]) + dot(&t_stream[p * d..(p + 1) * d], &hw[d..]) + hb;
            y.set2(ti, u, v);
        }
    }
    Ok(CgmForward { y, pooled, layers, s_last: s, t_last: t_stream })
}

/// Accumulate parameter gradients of `sum(dy ⊙ Y_CGM)` into `grads`.
///
/// The pooled exports are consumed as constants downstream, so no gradient
/// flows back through them.
pub fn cgm_backward(
    cfg: &CgmConfig,
    params: &ParamStore,
    time: &[TimeFeatures],
    fwd: &CgmForward,
    dy: &NumArray,
    grads: &mut GradMap,
) -> Result<()> {
    check_time(cfg, time)?;
    let (l, n, d) = (cfg.seq_len, cfg.n_nodes, cfg.d);
    dy.expect_shape(&[l, n], "CGM output gradient")?;
    let positions = l * n;

    let hw = params.value(paths::HEAD_W)?.data();
    let mut ds = vec![0.0; positions * d];
    let mut dt = vec![0.0; positions * d];
    {
        let mut dhw = vec![0.0; 2 * d];
        let mut dhb = 0.0;
        for ti in 0..l {
            for u in 0..n {
                let g = dy.get2(ti, u);
                if g == 0.0 {
                    continue;
                }
                let p = ti * n + u;
                let r = p * d..(p + 1) * d;
                axpy(g, &fwd.s_last[r.clone()], &mut dhw[..d]);
                axpy(g, &fwd.t_last[r.clone()], &mut dhw[d..]);
                axpy(g, &hw[..d], &mut ds[r.clone()]);
                axpy(g, &hw[d..], &mut dt[r]);
                dhb += g;
            }
        }
        axpy(1.0, &dhw, grads.slot(paths::HEAD_W, 2 * d));
        grads.slot(paths::HEAD_B, 1)[0] += dhb;
    }

    for i in (0..cfg.n_layers).rev() {
        let c = &fwd.layers[i];
        let [w_sp, w_tp, w_sg, w_tg] = gate_weights(params, i)?;
        let total = positions * d;
        let mut dsp = vec![0.0; total];
        let mut dtp = vec![0.0; total];
        let mut dsg = vec![0.0; total];
        let mut dtg = vec![0.0; total];
        for k in 0..total {
            let a = sigmoid(c.sg[k]);
            let b = tanh(c.tg[k]);
            let cc = sigmoid(c.tg[k]);
            let e = tanh(c.sg[k]);
            dsp[k] = ds[k] * a * b;
            dtp[k] = dt[k] * cc * e;
            let da = ds[k] * c.sp[k] * b;
            let db = ds[k] * c.sp[k] * a;
            let dc = dt[k] * c.tp[k] * e;
            let de = dt[k] * c.tp[k] * cc;
            dsg[k] = da * a * (1.0 - a) + de * (1.0 - e * e);
            dtg[k] = db * (1.0 - b * b) + dc * cc * (1.0 - cc);
        }
        // weight gradients: dW = dOut^T · input
        for (name, g, input) in [
            ("w_sp", &dsp, &c.s),
            ("w_tp", &dtp, &c.t),
            ("w_sg", &dsg, &c.s),
            ("w_tg", &dtg, &c.t),
        ] {
            let slot = grads.slot(&paths::layer(i, name), d * d);
            gemm(d, positions, d, g, true, input, false, slot, true);
        }
        // residual path keeps ds/dt; add projections' input gradients
        gemm(positions, d, d, &dsp, false, w_sp, false, &mut ds, true);
        gemm(positions, d, d, &dsg, false, w_sg, false, &mut ds, true);
        gemm(positions, d, d, &dtp, false, w_tp, false, &mut dt, true);
        gemm(positions, d, d, &dtg, false, w_tg, false, &mut dt, true);
    }

    // embeddings
    let p = cfg.partition;
    let mut dnode = vec![0.0; n * d];
    for ti in 0..l {
        for u in 0..n {
            let q = ti * n + u;
            axpy(1.0, &ds[q * d..(q + 1) * d], &mut dnode[u * d..(u + 1) * d]);
        }
    }
    axpy(1.0, &dnode, grads.slot(paths::NODE, n * d));
    let mut dtime = vec![0.0; l * d];
    for ti in 0..l {
        let rows = &dt[ti * n * d..(ti + 1) * n * d];
        add_col_sums(n, d, rows, &mut dtime[ti * d..(ti + 1) * d]);
    }
    for (ti, tf) in time.iter().enumerate() {
        let g = &dtime[ti * d..(ti + 1) * d];
        let week = grads.slot(paths::WEEK, 7 * p.week);
        axpy(1.0, &g[..p.week], &mut week[tf.week * p.week..(tf.week + 1) * p.week]);
        let hour = grads.slot(paths::HOUR, 24 * p.hour);
        axpy(1.0, &g[p.week..p.week + p.hour], &mut hour[tf.hour * p.hour..(tf.hour + 1) * p.hour]);
        let minute = grads.slot(paths::MINUTE, 4 * p.minute);
        let mb = tf.minute_bucket;
        axpy(1.0, &g[p.week + p.hour..], &mut minute[mb * p.minute..(mb + 1) * p.minute]);
    }
    Ok(())
}

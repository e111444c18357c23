//! Graph-integrated module: per-node temporal graphs over each window, with
//! interval-aware dropout and an injection vertex carrying external features,
//! followed by multi-order spatial convolution.

mod graph;
mod spatial;
mod temporal;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PastError, Result};
use crate::numcore::linalg::{axpy, dot, gemm};
use crate::numcore::{GradMap, Init, NumArray, ParamStore};

pub use graph::{
    apply_interval_dropout, build_temporal_adjacency, drop_probability, dropout_beta, TemporalGraph,
};
pub use spatial::{build_spatial_operator, spatial_forward, SpatialOperator};
pub use temporal::{temporal_forward, DEGREE_EPS};

use spatial::{spatial_backward, spatial_pass, SpatialPass};
use temporal::{edge_weights, temporal_backward, temporal_pass, TemporalGrads, TemporalPass};

/// Shape of the graph-integrated module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimConfig {
    pub seq_len: usize,
    pub n_nodes: usize,
    pub d: usize,
    pub n_layers: usize,
    pub k_order: usize,
    /// Whether each temporal graph carries an injection vertex fed by
    /// external (pooled cross-gated) features of width `2d`.
    pub inject: bool,
    /// Time scale (in steps) of the initial edge weights `exp(-|i-j| / scale)`;
    /// `0` starts every edge at the same weight.
    pub edge_decay: f64,
}

impl GimConfig {
    fn vertices(&self) -> usize {
        self.seq_len + 1
    }
}

pub(crate) mod paths {
    pub const EMBED_W: &str = "gim/embed/weight";
    pub const EMBED_B: &str = "gim/embed/bias";
    pub const MASK_TOKEN: &str = "gim/embed/mask_token";
    pub const HEAD_W: &str = "gim/head/weight";
    pub const HEAD_B: &str = "gim/head/bias";

    pub fn layer(i: usize, name: &str) -> String {
        format!("gim/layer{i}/{name}")
    }
}

pub fn register_gim_params(store: &mut ParamStore, cfg: &GimConfig) -> Result<()> {
    let (d, k1) = (cfg.d, cfg.k_order + 1);
    store.register(paths::EMBED_W, &[d], Init::FanIn(1))?;
    store.register(paths::EMBED_B, &[d], Init::Zeros)?;
    store.register(paths::MASK_TOKEN, &[d], Init::Normal(0.02))?;
    for i in 0..cfg.n_layers {
        store.insert(&paths::layer(i, "edge_logits"), initial_edge_logits(cfg.seq_len, cfg.edge_decay))?;
        store.register(&paths::layer(i, "temporal/weight"), &[d, d], Init::FanIn(d))?;
        store.register(&paths::layer(i, "temporal/bias"), &[d], Init::Zeros)?;
        store.register(&paths::layer(i, "spatial/weight"), &[d, k1 * d], Init::FanIn(k1 * d))?;
        store.register(&paths::layer(i, "spatial/bias"), &[d], Init::Zeros)?;
        if cfg.inject {
            store.register(&paths::layer(i, "inject/weight"), &[d, 2 * d], Init::FanIn(2 * d))?;
            store.register(&paths::layer(i, "inject/bias"), &[d], Init::Zeros)?;
        }
    }
    store.register(paths::HEAD_W, &[d], Init::FanIn(d))?;
    store.register(paths::HEAD_B, &[1], Init::Zeros)?;
    Ok(())
}

/// Logits whose softplus decays with time distance; injection edges start at
/// weight 1.
pub fn initial_edge_logits(seq_len: usize, decay: f64) -> NumArray {
    let v = seq_len + 1;
    let mut out = NumArray::zeros(&[v, v]);
    if decay <= 0.0 {
        return out;
    }
    let inverse = |w: f64| w.exp_m1().ln().max(-50.0);
    for i in 0..seq_len {
        for j in 0..seq_len {
            out.set2(i, j, inverse((-(i.abs_diff(j) as f64) / decay).exp()));
        }
        out.set2(i, seq_len, inverse(1.0));
    }
    out
}

/// Edge dropout settings for one training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSpec {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

struct LayerCache {
    /// Per node: `(L+1)×d` vertex states, injection vertex last.
    states: Vec<Vec<f64>>,
    temporal: Vec<TemporalPass>,
    spatial: SpatialPass,
}

/// Output and intermediates of [`gim_forward`].
pub struct GimForward {
    pub y: NumArray,
    adj: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    /// Node-major `N×L×d` output of the last layer.
    last: Vec<f64>,
}

impl GimForward {
    /// Temporal adjacency (after dropout) used for node `u`.
    pub fn adjacency(&self, u: usize) -> &[f64] {
        &self.adj[u]
    }
}

fn check_inputs(cfg: &GimConfig, x: &NumArray, m: &NumArray, external: Option<&[NumArray]>) -> Result<()> {
    let shape = [cfg.seq_len, cfg.n_nodes];
    x.expect_shape(&shape, "GIM values")?;
    m.expect_shape(&shape, "GIM mask")?;
    match (cfg.inject, external) {
        (true, Some(ext)) => {
            if ext.len() != cfg.n_layers {
                return Err(PastError::Shape(format!(
                    "{} external feature blocks for {} layers",
                    ext.len(),
                    cfg.n_layers
                )));
            }
            for e in ext {
                e.expect_shape(&[cfg.n_nodes, 2 * cfg.d], "external features")?;
            }
            Ok(())
        }
        (true, None) => Err(PastError::Shape("injection enabled but no external features given".into())),
        (false, _) => Ok(()),
    }
}

fn mix_seed(seed: u64, node: usize) -> u64 {
    // splitmix64 step over (seed, node)
    let mut z = seed ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run the module on one `L×N` window.
///
/// Observed entries embed as `x·w + b`, missing entries as a shared mask
/// token. `external[i]` holds the `N×2d` features projected into layer `i`'s
/// injection vertex.
pub fn gim_forward(
    cfg: &GimConfig,
    params: &ParamStore,
    op: &SpatialOperator,
    x: &NumArray,
    m: &NumArray,
    external: Option<&[NumArray]>,
    dropout: Option<DropoutSpec>,
) -> Result<GimForward> {
    check_inputs(cfg, x, m, external)?;
    let (l, n, d, v) = (cfg.seq_len, cfg.n_nodes, cfg.d, cfg.vertices());
    if op.n_nodes() != n || op.order() != cfg.k_order {
        return Err(PastError::Shape("spatial operator does not match the GIM config".into()));
    }

    let adj: Vec<Vec<f64>> = (0..n)
        .map(|u| {
            let col: Vec<f64> = (0..l).map(|t| m.get2(t, u)).collect();
            let mut a = build_temporal_adjacency(&col, cfg.inject)?;
            if let Some(spec) = dropout {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, u));
                graph::drop_edges_in_place(&mut a, &col, spec.alpha, spec.beta, &mut rng);
            }
            Ok(a.into_vec())
        })
        .collect::<Result<_>>()?;

    let ew = params.value(paths::EMBED_W)?.data();
    let eb = params.value(paths::EMBED_B)?.data();
    let token = params.value(paths::MASK_TOKEN)?.data();
    let mut h = vec![0.0; n * l * d];
    for u in 0..n {
        for t in 0..l {
            let dst = &mut h[(u * l + t) * d..(u * l + t + 1) * d];
            if m.get2(t, u) == 1.0 {
                let xv = x.get2(t, u);
                for k in 0..d {
                    dst[k] = xv * ew[k] + eb[k];
                }
            } else {
                dst.copy_from_slice(token);
            }
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let logits = params.value(&paths::layer(i, "edge_logits"))?.data();
        let (weight, _) = edge_weights(logits);
        let wt = params.value(&paths::layer(i, "temporal/weight"))?.data();
        let bt = params.value(&paths::layer(i, "temporal/bias"))?.data();
        let injected = match (cfg.inject, external) {
            (true, Some(ext)) => {
                let wi = params.value(&paths::layer(i, "inject/weight"))?.data();
                let bi = params.value(&paths::layer(i, "inject/bias"))?.data();
                let mut out = vec![0.0; n * d];
                for u in 0..n {
                    out[u * d..(u + 1) * d].copy_from_slice(bi);
                }
                gemm(n, 2 * d, d, ext[i].data(), false, wi, true, &mut out, true);
                Some(out)
            }
            _ => None,
        };

        let mut states = Vec::with_capacity(n);
        let mut temporal = Vec::with_capacity(n);
        let mut z = vec![0.0; n * l * d];
        for u in 0..n {
            let mut s = vec![0.0; v * d];
            s[..l * d].copy_from_slice(&h[u * l * d..(u + 1) * l * d]);
            if let Some(inj) = &injected {
                s[l * d..].copy_from_slice(&inj[u * d..(u + 1) * d]);
            }
            let pass = temporal_pass(&s, v, d, &adj[u], &weight, wt, bt);
            for (dst, &p) in z[u * l * d..(u + 1) * l * d].iter_mut().zip(&pass.pre[..l * d]) {
                *dst = p.max(0.0);
            }
            states.push(s);
            temporal.push(pass);
        }

        let ws = params.value(&paths::layer(i, "spatial/weight"))?.data();
        let bs = params.value(&paths::layer(i, "spatial/bias"))?.data();
        let sp = spatial_pass(op, &z, n, l, d, ws, bs);
        h = sp.output();
        layers.push(LayerCache { states, temporal, spatial: sp });
    }

    let hw = params.value(paths::HEAD_W)?.data();
    let hb = params.value(paths::HEAD_B)?.data()[0];
    let mut y = NumArray::zeros(&[l, n]);
    for u in 0..n {
        for t in 0..l {
            y.set2(t, u, dot(&h[(u * l + t) * d..(u * l + t + 1) * d], hw) + hb);
        }
    }
    Ok(GimForward { y, adj, layers, last: h })
}

/// Accumulate parameter gradients of `sum(dy ⊙ Y_GIM)` into `grads`.
///
/// External features are treated as constants; only the injection projection
/// receives their gradient.
#[allow(clippy::too_many_arguments)]
pub fn gim_backward(
    cfg: &GimConfig,
    params: &ParamStore,
    op: &SpatialOperator,
    fwd: &GimForward,
    x: &NumArray,
    m: &NumArray,
    external: Option<&[NumArray]>,
    dy: &NumArray,
    grads: &mut GradMap,
) -> Result<()> {
    check_inputs(cfg, x, m, external)?;
    dy.expect_shape(&[cfg.seq_len, cfg.n_nodes], "GIM output gradient")?;
    let (l, n, d, v) = (cfg.seq_len, cfg.n_nodes, cfg.d, cfg.vertices());

    let hw = params.value(paths::HEAD_W)?.data();
    let mut dh = vec![0.0; n * l * d];
    {
        let mut dhw = vec![0.0; d];
        let mut dhb = 0.0;
        for u in 0..n {
            for t in 0..l {
                let g = dy.get2(t, u);
                if g == 0.0 {
                    continue;
                }
                let row = (u * l + t) * d..(u * l + t + 1) * d;
                axpy(g, &fwd.last[row.clone()], &mut dhw);
                axpy(g, hw, &mut dh[row]);
                dhb += g;
            }
        }
        axpy(1.0, &dhw, grads.slot(paths::HEAD_W, d));
        grads.slot(paths::HEAD_B, 1)[0] += dhb;
    }

    for i in (0..cfg.n_layers).rev() {
        let cache = &fwd.layers[i];
        let ws = params.value(&paths::layer(i, "spatial/weight"))?.data();
        let mut dz = vec![0.0; n * l * d];
        {
            let k1 = cfg.k_order + 1;
            let mut dws = vec![0.0; d * k1 * d];
            let mut dbs = vec![0.0; d];
            spatial_backward(op, &cache.spatial, n, l, d, ws, &dh, &mut dws, &mut dbs, &mut dz);
            axpy(1.0, &dws, grads.slot(&paths::layer(i, "spatial/weight"), d * k1 * d));
            axpy(1.0, &dbs, grads.slot(&paths::layer(i, "spatial/bias"), d));
        }

        let logits = params.value(&paths::layer(i, "edge_logits"))?.data();
        let (_, weight_grad) = edge_weights(logits);
        let wt = params.value(&paths::layer(i, "temporal/weight"))?.data();
        let mut dlogits = vec![0.0; v * v];
        let mut dwt = vec![0.0; d * d];
        let mut dbt = vec![0.0; d];
        let mut d_inject = vec![0.0; n * d];
        let mut dh_prev = vec![0.0; n * l * d];
        for u in 0..n {
            let mut d_out = vec![0.0; v * d];
            d_out[..l * d].copy_from_slice(&dz[u * l * d..(u + 1) * l * d]);
            let mut d_states = vec![0.0; v * d];
            let mut tg = TemporalGrads { logits: &mut dlogits, w: &mut dwt, b: &mut dbt };
            temporal_backward(
                &cache.temporal[u],
                &cache.states[u],
                v,
                d,
                &fwd.adj[u],
                &weight_grad,
                wt,
                &d_out,
                &mut tg,
                &mut d_states,
            );
            dh_prev[u * l * d..(u + 1) * l * d].copy_from_slice(&d_states[..l * d]);
            d_inject[u * d..(u + 1) * d].copy_from_slice(&d_states[l * d..]);
        }
        axpy(1.0, &dlogits, grads.slot(&paths::layer(i, "edge_logits"), v * v));
        axpy(1.0, &dwt, grads.slot(&paths::layer(i, "temporal/weight"), d * d));
        axpy(1.0, &dbt, grads.slot(&paths::layer(i, "temporal/bias"), d));
        if let (true, Some(ext)) = (cfg.inject, external) {
            let dwi = grads.slot(&paths::layer(i, "inject/weight"), d * 2 * d);
            gemm(d, n, 2 * d, &d_inject, true, ext[i].data(), false, dwi, true);
            let dbi = grads.slot(&paths::layer(i, "inject/bias"), d);
            crate::numcore::linalg::add_col_sums(n, d, &d_inject, dbi);
        }
        dh = dh_prev;
    }

    let mut dew = vec![0.0; d];
    let mut deb = vec![0.0; d];
    let mut dtok = vec![0.0; d];
    for u in 0..n {
        for t in 0..l {
            let g = &dh[(u * l + t) * d..(u * l + t + 1) * d];
            if m.get2(t, u) == 1.0 {
                axpy(x.get2(t, u), g, &mut dew);
                axpy(1.0, g, &mut deb);
            } else {
                axpy(1.0, g, &mut dtok);
            }
        }
    }
    axpy(1.0, &dew, grads.slot(paths::EMBED_W, d));
    axpy(1.0, &deb, grads.slot(paths::EMBED_B, d));
    axpy(1.0, &dtok, grads.slot(paths::MASK_TOKEN, d));
    Ok(())
}

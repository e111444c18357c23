use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{time_features, CalendarAnchor, Edge, TrafficDataset};
use crate::error::{PastError, Result};
use crate::numcore::NumArray;

/// Parameters of the synthetic road network generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_days: usize,
    pub step_minutes: u32,
    pub seed: u64,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            n_days: 20,
            step_minutes: 15,
            seed: 0,
            noise_level: 1.0,
        }
    }
}

const TARGET_DEGREE: f64 = 4.0;
const MAX_ATTEMPTS: usize = 10;
const RADIUS_GROWTH: f64 = 1.2;
const FIELD_BANDWIDTH: f64 = 0.25;
const AR_COEF: f64 = 0.8;
const NOISE_SCALE: f64 = 2.0;
const WEEKEND_FACTOR: f64 = 0.4;

/// Random geometric road graph with periodic, spatially correlated series.
///
/// Each series is a two-harmonic daily profile scaled down on weekends, plus a
/// node offset and amplitude drawn from spatially smooth fields, plus AR(1)
/// noise whose innovations are shared with graph neighbours.
pub fn synthesize_dataset(cfg: &SynthConfig) -> Result<TrafficDataset> {
    if cfg.n_nodes < 2 || cfg.n_days < 2 {
        return Err(PastError::InvalidConfig(format!(
            "synthetic dataset needs n_nodes >= 2 and n_days >= 2, got {} and {}",
            cfg.n_nodes, cfg.n_days
        )));
    }
    if cfg.step_minutes == 0 || 1440 % cfg.step_minutes != 0 {
        return Err(PastError::InvalidConfig(format!(
            "step_minutes {} must divide a day",
            cfg.step_minutes
        )));
    }
    if cfg.noise_level.is_nan() || cfg.noise_level < 0.0 {
        return Err(PastError::InvalidConfig("noise_level must be >= 0".into()));
    }
    let n = cfg.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
        (dx * dx + dy * dy).sqrt()
    };

    let mut radius = (TARGET_DEGREE / ((n - 1) as f64 * PI)).sqrt();
    let mut edges = Vec::new();
    let mut connected = false;
    for _ in 0..MAX_ATTEMPTS {
        edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| dist(i, j) <= radius)
            .map(|(i, j)| Edge { i, j, distance: dist(i, j) })
            .collect();
        if is_connected(n, &edges) {
            connected = true;
            break;
        }
        radius *= RADIUS_GROWTH;
    }
    if !connected {
        return Err(PastError::Disconnected(MAX_ATTEMPTS));
    }

    let smooth_field = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|u| {
                let (mut num, mut den) = (0.0, 0.0);
                for (v, zv) in z.iter().enumerate() {
                    let k = (-dist(u, v).powi(2) / (2.0 * FIELD_BANDWIDTH.powi(2))).exp();
                    num += k * zv;
                    den += k;
                }
                num / den
            })
            .collect()
    };
    let offset = smooth_field(&mut rng);
    let amp_field = smooth_field(&mut rng);
    let phase_field = smooth_field(&mut rng);

    let steps_per_day = (1440 / cfg.step_minutes) as usize;
    let t_total = steps_per_day * cfg.n_days;
    let start = CalendarAnchor::default();

    let mut neighbours = vec![Vec::new(); n];
    for e in &edges {
        neighbours[e.i].push(e.j);
        neighbours[e.j].push(e.i);
    }
    let sigma = cfg.noise_level * NOISE_SCALE;
    let innovation_scale = (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut noise = vec![0.0; n];
    if sigma > 0.0 {
        for v in noise.iter_mut() {
            *v = sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let mut values = NumArray::zeros(&[t_total, n]);
    for t in 0..t_total {
        let tf = time_features(start, cfg.step_minutes, t);
        let week_factor = if tf.week >= 5 { WEEKEND_FACTOR } else { 1.0 };
        let frac = (t % steps_per_day) as f64 / steps_per_day as f64;
        if sigma > 0.0 && t > 0 {
            let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for u in 0..n {
                let shared: f64 = xi[u] + neighbours[u].iter().map(|&v| xi[v]).sum::<f64>();
                let eta = shared / ((1 + neighbours[u].len()) as f64).sqrt();
                noise[u] = AR_COEF * noise[u] + innovation_scale * sigma * eta;
            }
        }
        let row = values.row_mut(t);
        for u in 0..n {
            let phase = 0.3 * phase_field[u];
            let daily = (2.0 * PI * frac + phase).sin() + 0.5 * (4.0 * PI * frac + 2.0 * phase).sin();
            let amp = 8.0 + 3.0 * amp_field[u];
            row[u] = 50.0 + 5.0 * offset[u] - amp * week_factor * daily + noise[u];
        }
    }

    TrafficDataset::new(
        values,
        start,
        cfg.step_minutes,
        (0..n).map(|i| format!("node_{i}")).collect(),
        edges,
    )
}

fn is_connected(n: usize, edges: &[Edge]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = (0..x.len() - lag)
            .map(|i| (x[i] - mean) * (x[i + lag] - mean))
            .sum();
        cov / var
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig { n_nodes: 8, n_days: 3, ..Default::default() };
        let a = synthesize_dataset(&cfg).unwrap();
        let b = synthesize_dataset(&cfg).unwrap();
        assert!(a.values.bit_eq(&b.values));
        assert_eq!(a.edges, b.edges);
        let c = synthesize_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn noiseless_series_is_daily_periodic_within_weekday_class() {
        let cfg = SynthConfig { n_nodes: 6, n_days: 9, noise_level: 0.0, ..Default::default() };
        let ds = synthesize_dataset(&cfg).unwrap();
        let spd = 96;
        let weekend = |t: usize| ds.time_features_at(t).unwrap().week >= 5;
        for t in 0..ds.n_steps() - spd {
            if weekend(t) == weekend(t + spd) {
                assert_eq!(ds.values.row(t), ds.values.row(t + spd), "t = {t}");
            }
        }
    }

    #[test]
    fn day_lag_autocorrelation_beats_seven_hours() {
        let ds = synthesize_dataset(&SynthConfig::default()).unwrap();
        let spd = 96;
        let seven_hours = 7 * 4;
        for u in 0..ds.n_nodes() {
            let col: Vec<f64> = (0..ds.n_steps()).map(|t| ds.values.get2(t, u)).collect();
            assert!(autocorr(&col, spd) > autocorr(&col, seven_hours), "node {u}");
        }
    }

    #[test]
    fn graph_is_connected_with_modest_degree() {
        let ds = synthesize_dataset(&SynthConfig::default()).unwrap();
        assert!(is_connected(ds.n_nodes(), &ds.edges));
        let avg_degree = 2.0 * ds.edges.len() as f64 / ds.n_nodes() as f64;
        assert!(avg_degree > 1.5 && avg_degree < 10.0, "avg degree {avg_degree}");
        ds.validate().unwrap();
    }

    #[test]
    fn rejects_degenerate_config() {
        assert!(synthesize_dataset(&SynthConfig { n_nodes: 1, ..Default::default() }).is_err());
        assert!(synthesize_dataset(&SynthConfig { n_days: 1, ..Default::default() }).is_err());
        assert!(synthesize_dataset(&SynthConfig { step_minutes: 7, ..Default::default() }).is_err());
    }
}

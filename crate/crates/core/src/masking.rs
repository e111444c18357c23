//! Missing-data scenarios: random, fiber (per-node temporal gaps) and block
//! (gaps shared by a connected group of nodes).

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_values_csv, write_values_csv};
use crate::error::{PastError, Result};
use crate::numcore::NumArray;

/// Binary `T×N` indicator: 1 = observed, 0 = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    bits: NumArray,
}

impl MaskMatrix {
    pub fn new(bits: NumArray) -> Result<Self> {
        if bits.shape().len() != 2 {
            return Err(PastError::Shape(format!("mask must be 2-D, got {:?}", bits.shape())));
        }
        if let Some(v) = bits.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(PastError::InvalidConfig(format!("mask entry {v} is not 0 or 1")));
        }
        Ok(Self { bits })
    }

    pub fn all_observed(t: usize, n: usize) -> Self {
        Self { bits: NumArray::filled(&[t, n], 1.0) }
    }

    pub fn bits(&self) -> &NumArray {
        &self.bits
    }

    pub fn into_bits(self) -> NumArray {
        self.bits
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bits.rows(), self.bits.cols())
    }

    pub fn is_observed(&self, t: usize, u: usize) -> bool {
        self.bits.get2(t, u) == 1.0
    }

    pub fn missing_count(&self) -> usize {
        self.bits.data().iter().filter(|&&v| v == 0.0).count()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (bits, _) = read_values_csv(path)?;
        Self::new(bits)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_values_csv(path, &self.bits, None)
    }

    fn mark(&mut self, t: usize, u: usize) -> bool {
        let n = self.bits.cols();
        let cell = &mut self.bits.data_mut()[t * n + u];
        let was_observed = *cell == 1.0;
        *cell = 0.0;
        was_observed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Random,
    Fiber,
    Block,
}

/// One missing-data condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub r: f64,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Draw each block's span uniformly from `1..=s` instead of exactly `s`.
    #[serde(default)]
    pub uniform_span: bool,
}

impl ScenarioConfig {
    pub fn random(r: f64) -> Self {
        Self { kind: ScenarioKind::Random, r, l: None, s: None, seed: None, uniform_span: false }
    }

    pub fn fiber(r: f64, l: usize) -> Self {
        Self { kind: ScenarioKind::Fiber, r, l: Some(l), s: None, seed: None, uniform_span: false }
    }

    pub fn block(r: f64, l: usize, s: usize) -> Self {
        Self { kind: ScenarioKind::Block, r, l: Some(l), s: Some(s), seed: None, uniform_span: false }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(PastError::InvalidConfig(format!("missing rate {} not in (0, 1)", self.r)));
        }
        let need = |v: Option<usize>, name: &str| match v {
            Some(x) if x >= 1 => Ok(()),
            _ => Err(PastError::InvalidConfig(format!("{:?} scenario needs {name} >= 1", self.kind))),
        };
        match self.kind {
            ScenarioKind::Random => Ok(()),
            ScenarioKind::Fiber => need(self.l, "l"),
            ScenarioKind::Block => need(self.l, "l").and(need(self.s, "s")),
        }
    }

    /// Short identifier used in reports, e.g. `block_r0.4_l48_s5`.
    pub fn label(&self) -> String {
        match self.kind {
            ScenarioKind::Random => format!("random_r{}", self.r),
            ScenarioKind::Fiber => format!("fiber_r{}_l{}", self.r, self.l.unwrap_or(0)),
            ScenarioKind::Block => format!(
                "block_r{}_l{}_s{}",
                self.r,
                self.l.unwrap_or(0),
                self.s.unwrap_or(0)
            ),
        }
    }

    /// Generate a `T×N` mask; `adjacency` is required for block scenarios.
    pub fn generate(
        &self,
        t: usize,
        n: usize,
        adjacency: Option<&NumArray>,
        default_seed: u64,
    ) -> Result<MaskMatrix> {
        self.validate()?;
        let seed = self.seed.unwrap_or(default_seed);
        match self.kind {
            ScenarioKind::Random => gen_random((t, n), self.r, seed),
            ScenarioKind::Fiber => Ok(gen_fiber((t, n), self.r, self.l.unwrap(), seed)?.0),
            ScenarioKind::Block => {
                let adj = adjacency.ok_or_else(|| {
                    PastError::InvalidConfig("block scenario needs a spatial adjacency".into())
                })?;
                let opts = BlockOptions { uniform_span: self.uniform_span };
                Ok(gen_block((t, n), self.r, self.l.unwrap(), self.s.unwrap(), adj, seed, opts)?.0)
            }
        }
    }
}

fn check_rate(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(PastError::InvalidConfig(format!("missing rate {r} not in (0, 1)")))
    }
}

/// Each entry missing independently with probability `r`.
pub fn gen_random(shape: (usize, usize), r: f64, seed: u64) -> Result<MaskMatrix> {
    check_rate(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = NumArray::zeros(&[shape.0, shape.1]);
    for v in bits.data_mut() {
        *v = if rng.random::<f64>() < r { 0.0 } else { 1.0 };
    }
    MaskMatrix::new(bits)
}

/// A temporal gap on one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub node: usize,
    pub start: usize,
    pub len: usize,
}

/// Missing segments of uniform length `1..=l` at uniform nodes and offsets,
/// added until the global missing fraction reaches `r`. Overlaps are allowed.
pub fn gen_fiber(shape: (usize, usize), r: f64, l: usize, seed: u64) -> Result<(MaskMatrix, Vec<Segment>)> {
    check_rate(r)?;
    let (t, n) = shape;
    if l < 1 || l > t {
        return Err(PastError::InvalidConfig(format!("fiber length {l} not in [1, {t}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = MaskMatrix::all_observed(t, n);
    let target = r * (t * n) as f64;
    let mut missing = 0usize;
    let mut log = Vec::new();
    while (missing as f64) < target {
        let node = rng.random_range(0..n);
        let len = rng.random_range(1..=l);
        let start = rng.random_range(0..=t - len);
        for step in start..start + len {
            missing += mask.mark(step, node) as usize;
        }
        log.push(Segment { node, start, len });
    }
    Ok((mask, log))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlockOptions {
    pub uniform_span: bool,
}

/// A gap shared by a connected set of nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub nodes: Vec<usize>,
    pub start: usize,
    pub len: usize,
}

/// Blocks of `s` connected nodes (breadth-first from a random seed node,
/// neighbours visited in ascending index order) missing for a uniform
/// `1..=l` steps, added until the missing fraction reaches `r`.
pub fn gen_block(
    shape: (usize, usize),
    r: f64,
    l: usize,
    s: usize,
    adjacency: &NumArray,
    seed: u64,
    opts: BlockOptions,
) -> Result<(MaskMatrix, Vec<Block>)> {
    check_rate(r)?;
    let (t, n) = shape;
    adjacency.expect_shape(&[n, n], "block adjacency")?;
    if l < 1 || l > t {
        return Err(PastError::InvalidConfig(format!("block length {l} not in [1, {t}]")));
    }
    if s < 1 || s > n {
        return Err(PastError::InvalidConfig(format!("block span {s} not in [1, {n}]")));
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|u| (0..n).filter(|&v| v != u && adjacency.get2(u, v) > 0.0).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = MaskMatrix::all_observed(t, n);
    let target = r * (t * n) as f64;
    let mut missing = 0usize;
    let mut log = Vec::new();
    let mut warned = false;
    while (missing as f64) < target {
        let root = rng.random_range(0..n);
        let span = if opts.uniform_span { rng.random_range(1..=s) } else { s };
        let nodes = bfs_take(&neighbours, root, span);
        if nodes.len() < span && !warned {
            log::warn!(
                "component of node {root} has {} nodes, fewer than block span {span}",
                nodes.len()
            );
            warned = true;
        }
        let len = rng.random_range(1..=l);
        let start = rng.random_range(0..=t - len);
        for &u in &nodes {
            for step in start..start + len {
                missing += mask.mark(step, u) as usize;
            }
        }
        log.push(Block { nodes, start, len });
    }
    Ok((mask, log))
}

fn bfs_take(neighbours: &[Vec<usize>], root: usize, count: usize) -> Vec<usize> {
    let mut seen = vec![false; neighbours.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut out = Vec::with_capacity(count);
    while let Some(u) = queue.pop_front() {
        out.push(u);
        if out.len() == count {
            break;
        }
        for &v in &neighbours[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    out
}

/// Exact summary of a mask's missingness.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStats {
    pub missing_rate: f64,
    /// Longest missing run along time, per node.
    pub max_run: Vec<usize>,
    /// Mean length over all maximal missing runs (0 when there are none).
    pub mean_run: f64,
}

pub fn mask_stats(mask: &MaskMatrix) -> MaskStats {
    let (t, n) = mask.shape();
    let total = t * n;
    let missing = mask.missing_count();
    let mut max_run = vec![0; n];
    let (mut runs, mut run_total) = (0usize, 0usize);
    for (u, best) in max_run.iter_mut().enumerate() {
        let mut cur = 0;
        for step in 0..=t {
            if step < t && !mask.is_observed(step, u) {
                cur += 1;
            } else if cur > 0 {
                *best = (*best).max(cur);
                runs += 1;
                run_total += cur;
                cur = 0;
            }
        }
    }
    MaskStats {
        missing_rate: if total == 0 { 0.0 } else { missing as f64 / total as f64 },
        max_run,
        mean_run: if runs == 0 { 0.0 } else { run_total as f64 / runs as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path_adjacency(n: usize) -> NumArray {
        let mut a = NumArray::zeros(&[n, n]);
        for i in 0..n - 1 {
            a.set2(i, i + 1, 1.0);
            a.set2(i + 1, i, 1.0);
        }
        a
    }

    fn is_connected_subset(adj: &NumArray, nodes: &[usize]) -> bool {
        let inside = |v: usize| nodes.contains(&v);
        let mut seen = vec![nodes[0]];
        let mut stack = vec![nodes[0]];
        while let Some(u) = stack.pop() {
            for v in 0..adj.rows() {
                if adj.get2(u, v) > 0.0 && inside(v) && !seen.contains(&v) {
                    seen.push(v);
                    stack.push(v);
                }
            }
        }
        seen.len() == nodes.len()
    }

    #[test]
    fn random_rate_within_three_sigma() {
        let m = gen_random((480, 20), 0.4, 17).unwrap();
        let missing = m.missing_count() as f64;
        let sigma = (9600.0f64 * 0.4 * 0.6).sqrt();
        assert!((missing - 3840.0).abs() <= 3.0 * sigma, "missing = {missing}");
        assert_eq!(m, gen_random((480, 20), 0.4, 17).unwrap());
        assert_ne!(m, gen_random((480, 20), 0.4, 18).unwrap());
    }

    #[test]
    fn random_tiny_rate_is_all_observed() {
        let m = gen_random((100, 100), 1e-9, 3).unwrap();
        assert_eq!(m.missing_count(), 0);
        assert!(gen_random((4, 4), 0.0, 0).is_err());
        assert!(gen_random((4, 4), 1.0, 0).is_err());
    }

    #[test]
    fn fiber_rate_and_length_bounds() {
        let (t, n, l) = (960, 10, 48);
        let (m, log) = gen_fiber((t, n), 0.4, l, 5).unwrap();
        let rate = mask_stats(&m).missing_rate;
        assert!(rate >= 0.4 && rate <= 0.4 + l as f64 / (t * n) as f64, "rate {rate}");
        assert!(log.iter().all(|s| s.len >= 1 && s.len <= l && s.start + s.len <= t));
    }

    #[test]
    fn fiber_runs_bounded_when_segments_disjoint() {
        // sparse setting: search seeds until the segments never touch
        let (t, n, l) = (2000, 4, 6);
        for seed in 0..50 {
            let (m, log) = gen_fiber((t, n), 0.01, l, seed).unwrap();
            let touching = log.iter().enumerate().any(|(i, a)| {
                log.iter().skip(i + 1).any(|b| {
                    a.node == b.node && a.start <= b.start + b.len && b.start <= a.start + a.len
                })
            });
            if !touching {
                assert!(mask_stats(&m).max_run.iter().all(|&r| r <= l));
                return;
            }
        }
        panic!("no seed produced disjoint segments");
    }

    #[test]
    fn fiber_unit_length_is_sequential_random() {
        let (_, log) = gen_fiber((200, 5), 0.3, 1, 9).unwrap();
        assert!(log.iter().all(|s| s.len == 1));
    }

    #[test]
    fn block_invariants() {
        let (t, n, l, s) = (480, 12, 24, 5);
        let adj = path_adjacency(n);
        let (m, log) = gen_block((t, n), 0.4, l, s, &adj, 4, BlockOptions::default()).unwrap();
        let rate = mask_stats(&m).missing_rate;
        assert!(rate >= 0.4 && rate <= 0.4 + (s * l) as f64 / (t * n) as f64);
        for b in &log {
            assert_eq!(b.nodes.len(), s);
            let mut uniq = b.nodes.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), s);
            assert!(is_connected_subset(&adj, &b.nodes));
            assert!(b.len >= 1 && b.len <= l);
        }
    }

    #[test]
    fn block_bfs_breaks_ties_by_index() {
        // star centred at 2: neighbours 0,1,3,4 visited ascending
        let mut adj = NumArray::zeros(&[5, 5]);
        for v in [0, 1, 3, 4] {
            adj.set2(2, v, 1.0);
            adj.set2(v, 2, 1.0);
        }
        let neighbours: Vec<Vec<usize>> = (0..5)
            .map(|u| (0..5).filter(|&v| adj.get2(u, v) > 0.0).collect())
            .collect();
        assert_eq!(bfs_take(&neighbours, 2, 3), vec![2, 0, 1]);
        assert_eq!(bfs_take(&neighbours, 4, 3), vec![4, 2, 0]);
    }

    #[test]
    fn block_small_component_uses_whole_component() {
        let mut adj = NumArray::zeros(&[4, 4]);
        adj.set2(0, 1, 1.0);
        adj.set2(1, 0, 1.0);
        let (_, log) = gen_block((50, 4), 0.3, 5, 3, &adj, 1, BlockOptions::default()).unwrap();
        for b in &log {
            let expected = if b.nodes[0] <= 1 { 2 } else { 1 };
            assert_eq!(b.nodes.len(), expected);
        }
    }

    #[test]
    fn block_span_one_matches_fiber_shape() {
        let adj = path_adjacency(6);
        let (_, log) = gen_block((100, 6), 0.2, 10, 1, &adj, 2, BlockOptions::default()).unwrap();
        assert!(log.iter().all(|b| b.nodes.len() == 1 && b.len <= 10));
    }

    #[test]
    fn uniform_span_varies_block_sizes() {
        let adj = path_adjacency(10);
        let opts = BlockOptions { uniform_span: true };
        let (_, log) = gen_block((400, 10), 0.4, 8, 5, &adj, 6, opts).unwrap();
        assert!(log.iter().all(|b| (1..=5).contains(&b.nodes.len())));
        assert!(log.iter().any(|b| b.nodes.len() < 5));
    }

    #[test]
    fn stats_examples() {
        let s = mask_stats(&MaskMatrix::all_observed(10, 3));
        assert_eq!((s.missing_rate, s.max_run.clone(), s.mean_run), (0.0, vec![0, 0, 0], 0.0));

        let mut bits = NumArray::filled(&[96, 2], 1.0);
        for t in 0..96 {
            bits.set2(t, 1, 0.0);
        }
        let s = mask_stats(&MaskMatrix::new(bits).unwrap());
        assert_eq!(s.missing_rate, 0.5);
        assert_eq!(s.max_run, vec![0, 96]);

        // column 0: 0,1,0 -> two runs of 1; column 1: 0,0,1 -> one run of 2
        let bits = NumArray::from_vec(&[3, 2], vec![0., 0., 1., 0., 0., 1.]).unwrap();
        let s = mask_stats(&MaskMatrix::new(bits).unwrap());
        assert!((s.missing_rate - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.max_run, vec![1, 2]);
        assert!((s.mean_run - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(MaskMatrix::new(NumArray::filled(&[2, 2], 0.5)).is_err());
    }

    #[test]
    fn mask_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = gen_random((30, 4), 0.3, 1).unwrap();
        m.write_csv(&p).unwrap();
        assert_eq!(MaskMatrix::read_csv(&p).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn generators_are_binary_and_reach_rate(
            seed in 0u64..1000,
            r in 0.05f64..0.8,
            l in 1usize..30,
            s in 1usize..5,
        ) {
            let (t, n) = (120, 8);
            let adj = path_adjacency(n);
            let masks = [
                gen_random((t, n), r, seed).unwrap(),
                gen_fiber((t, n), r, l, seed).unwrap().0,
                gen_block((t, n), r, l, s, &adj, seed, BlockOptions::default()).unwrap().0,
            ];
            let bounds = [1.0, l as f64, (s * l) as f64];
            for (i, m) in masks.iter().enumerate() {
                prop_assert!(m.bits().data().iter().all(|&v| v == 0.0 || v == 1.0));
                if i > 0 {
                    let rate = mask_stats(m).missing_rate;
                    prop_assert!(rate >= r);
                    prop_assert!(rate <= r + bounds[i] / (t * n) as f64 + 1e-12);
                }
            }
            prop_assert_eq!(&masks[1], &gen_fiber((t, n), r, l, seed).unwrap().0);
        }
    }
}

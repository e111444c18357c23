//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PASTCKPT"
//! version    u32
//! config     u64 byte length, then UTF-8 `key=value` lines
//! arrays     u64 count, then per array:
//!              u32 name length, UTF-8 name,
//!              u32 rank, u64 × rank dims,
//!              f64 × prod(dims) values
//! ```
//!
//! Array names are `param/<path>`, `adam/m/<path>`, `adam/v/<path>` and
//! `graph/adjacency`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{PastConfig, PastModel, ResidualSign, Variant};
use crate::cgm::TimePartition;
use crate::data::NormStats;
use crate::error::{PastError, Result};
use crate::numcore::{AdamState, NumArray, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PASTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_text(model: &PastModel) -> String {
    let c = &model.config;
    let p = c.cgm_config().partition;
    let o = &model.optimizer;
    let mut lines = vec![
        format!("seq_len={}", c.seq_len),
        format!("n_nodes={}", c.n_nodes),
        format!("d={}", c.d),
        format!("n_layers={}", c.n_layers),
        format!("k_order={}", c.k_order),
        format!("alpha={}", c.alpha),
        format!("p_dropout={}", c.p_dropout),
        format!("edge_decay={}", c.edge_decay),
        format!("variant={}", c.variant.as_str()),
        format!("residual={}", c.residual.as_str()),
        format!("partition={},{},{}", p.week, p.hour, p.minute),
        format!("param_seed={}", model.params.rng_seed()),
        format!("adam_lr={}", o.lr),
        format!("adam_beta1={}", o.beta1),
        format!("adam_beta2={}", o.beta2),
        format!("adam_epsilon={}", o.epsilon),
        format!("adam_step={}", o.step_count),
    ];
    if let Some(ns) = model.norm_stats {
        lines.push(format!("norm_mean={}", ns.mean));
        lines.push(format!("norm_std={}", ns.std));
    }
    lines.join("\n")
}

fn put_array(buf: &mut Vec<u8>, name: &str, a: &NumArray) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
    for &dim in a.shape() {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for v in a.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &PastModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = config_text(model);
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());

    let mut arrays: Vec<(String, &NumArray)> = Vec::new();
    for (path, p) in model.params.iter() {
        arrays.push((format!("param/{path}"), &p.value));
    }
    for (path, m) in &model.optimizer.first_moment {
        arrays.push((format!("adam/m/{path}"), m));
    }
    for (path, v) in &model.optimizer.second_moment {
        arrays.push((format!("adam/v/{path}"), v));
    }
    arrays.push(("graph/adjacency".into(), &model.adjacency));
    buf.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, a) in arrays {
        put_array(&mut buf, &name, a);
    }
    buf
}

pub fn save_checkpoint(model: &PastModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            PastError::Checkpoint(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| PastError::Checkpoint("length overflows usize".into()))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| PastError::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<&str, &str>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| PastError::Checkpoint(format!("malformed config line `{l}`")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = kv
        .get(key)
        .ok_or_else(|| PastError::Checkpoint(format!("missing config key `{key}`")))?;
    raw.parse()
        .map_err(|_| PastError::Checkpoint(format!("bad value `{raw}` for `{key}`")))
}

pub fn decode(bytes: &[u8]) -> Result<PastModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(PastError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(PastError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let text_len = r.len()?;
    let kv = parse_kv(r.utf8(text_len)?)?;

    let partition: Vec<usize> = field::<String>(&kv, "partition")?
        .split(',')
        .map(|s| s.parse().map_err(|_| PastError::Checkpoint(format!("bad partition `{s}`"))))
        .collect::<Result<_>>()?;
    if partition.len() != 3 {
        return Err(PastError::Checkpoint("partition needs three entries".into()));
    }
    let config = PastConfig {
        seq_len: field(&kv, "seq_len")?,
        n_nodes: field(&kv, "n_nodes")?,
        d: field(&kv, "d")?,
        n_layers: field(&kv, "n_layers")?,
        k_order: field(&kv, "k_order")?,
        alpha: field(&kv, "alpha")?,
        p_dropout: field(&kv, "p_dropout")?,
        edge_decay: field(&kv, "edge_decay")?,
        variant: Variant::parse(&field::<String>(&kv, "variant")?)?,
        residual: ResidualSign::parse(&field::<String>(&kv, "residual")?)?,
        partition: Some(TimePartition { week: partition[0], hour: partition[1], minute: partition[2] }),
    };
    let mut optimizer = AdamState::with_betas(
        field(&kv, "adam_lr")?,
        field(&kv, "adam_beta1")?,
        field(&kv, "adam_beta2")?,
        field(&kv, "adam_epsilon")?,
    );
    optimizer.step_count = field(&kv, "adam_step")?;
    let norm_stats = match (kv.contains_key("norm_mean"), kv.contains_key("norm_std")) {
        (true, true) => Some(NormStats { mean: field(&kv, "norm_mean")?, std: field(&kv, "norm_std")? }),
        (false, false) => None,
        _ => return Err(PastError::Checkpoint("incomplete normalization statistics".into())),
    };

    let mut params = ParamStore::new(field(&kv, "param_seed")?);
    let mut adjacency = None;
    let count = r.len()?;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.utf8(name_len)?.to_string();
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.len()).collect::<Result<_>>()?;
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| PastError::Checkpoint(format!("array `{name}` too large")))?;
        let raw = r.take(total.checked_mul(8).ok_or_else(|| PastError::Checkpoint("array too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let array = NumArray::from_vec(&dims, data).map_err(|e| PastError::Checkpoint(e.to_string()))?;
        if let Some(path) = name.strip_prefix("param/") {
            params.insert(path, array)?;
        } else if let Some(path) = name.strip_prefix("adam/m/") {
            optimizer.first_moment.insert(path.to_string(), array);
        } else if let Some(path) = name.strip_prefix("adam/v/") {
            optimizer.second_moment.insert(path.to_string(), array);
        } else if name == "graph/adjacency" {
            adjacency = Some(array);
        } else {
            return Err(PastError::Checkpoint(format!("unknown array `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(PastError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let adjacency = adjacency.ok_or_else(|| PastError::Checkpoint("missing graph/adjacency".into()))?;

    // every expected parameter must be present with its registered shape
    let reference = PastModel::new(config, &adjacency, 0)
        .map_err(|e| PastError::Checkpoint(format!("inconsistent config: {e}")))?;
    for (path, p) in reference.params.iter() {
        let got = params
            .value(path)
            .map_err(|_| PastError::Checkpoint(format!("missing parameter `{path}`")))?;
        if got.shape() != p.value.shape() {
            return Err(PastError::Checkpoint(format!(
                "parameter `{path}` has shape {:?}, config implies {:?}",
                got.shape(),
                p.value.shape()
            )));
        }
    }
    if params.len() != reference.params.len() {
        return Err(PastError::Checkpoint("checkpoint holds parameters the config does not define".into()));
    }
    PastModel::from_parts(config, params, adjacency, norm_stats, optimizer)
}

pub fn load_checkpoint(path: &Path) -> Result<PastModel> {
    decode(&std::fs::read(path)?)
}

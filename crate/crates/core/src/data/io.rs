//! File formats: values CSV (one row per step, one column per node) and graph
//! JSON (`step_minutes`, `start`, `nodes`, `edges` as `[i, j, distance]`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CalendarAnchor, Edge, TrafficDataset};
use crate::error::{PastError, Result};
use crate::numcore::NumArray;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeId {
    Text(String),
    Number(i64),
}

impl NodeId {
    fn into_string(self) -> String {
        match self {
            NodeId::Text(s) => s,
            NodeId::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGraph {
    step_minutes: u32,
    start: CalendarAnchor,
    nodes: Vec<NodeId>,
    edges: Vec<(usize, usize, f64)>,
}

/// Parsed contents of a graph JSON file.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFile {
    pub step_minutes: u32,
    pub start: CalendarAnchor,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

impl GraphFile {
    pub fn of(ds: &TrafficDataset) -> Self {
        Self {
            step_minutes: ds.step_minutes,
            start: ds.start,
            nodes: ds.node_ids.clone(),
            edges: ds.edges.clone(),
        }
    }
}

pub fn read_graph_json(path: &Path) -> Result<GraphFile> {
    let raw: RawGraph = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok(GraphFile {
        step_minutes: raw.step_minutes,
        start: raw.start,
        nodes: raw.nodes.into_iter().map(NodeId::into_string).collect(),
        edges: raw
            .edges
            .into_iter()
            .map(|(i, j, distance)| Edge { i, j, distance })
            .collect(),
    })
}

pub fn write_graph_json(path: &Path, graph: &GraphFile) -> Result<()> {
    let raw = RawGraph {
        step_minutes: graph.step_minutes,
        start: graph.start,
        nodes: graph.nodes.iter().cloned().map(NodeId::Text).collect(),
        edges: graph.edges.iter().map(|e| (e.i, e.j, e.distance)).collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &raw)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Read a `T×N` grid; returns the values and the header names.
pub fn read_values_csv(path: &Path) -> Result<(NumArray, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(PastError::Parse(format!(
                "{}: row {} has {} fields, header has {n}",
                path.display(),
                line + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| {
                PastError::Parse(format!(
                    "{}: row {}: `{field}` is not a number",
                    path.display(),
                    line + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((NumArray::from_vec(&[rows, n], data)?, header))
}

/// Write a `T×N` grid with a `node_0..node_{N-1}` header unless names are given.
pub fn write_values_csv(path: &Path, values: &NumArray, header: Option<&[String]>) -> Result<()> {
    if values.shape().len() != 2 {
        return Err(PastError::Shape(format!("expected 2-D grid, got {:?}", values.shape())));
    }
    let n = values.cols();
    let names: Vec<String> = match header {
        Some(h) if h.len() == n => h.to_vec(),
        Some(h) => {
            return Err(PastError::Shape(format!("{} header names for {n} columns", h.len())))
        }
        None => (0..n).map(|i| format!("node_{i}")).collect(),
    };
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(&names)?;
    for r in 0..values.rows() {
        wtr.write_record(values.row(r).iter().map(|v| format!("{v}")))?;
    }
    wtr.flush()?;
    Ok(())
}

impl TrafficDataset {
    pub fn from_files(values_csv: &Path, graph_json: &Path) -> Result<Self> {
        let (values, _) = read_values_csv(values_csv)?;
        let graph = read_graph_json(graph_json)?;
        TrafficDataset::new(values, graph.start, graph.step_minutes, graph.nodes, graph.edges)
    }

    pub fn write_files(&self, values_csv: &Path, graph_json: &Path) -> Result<()> {
        write_values_csv(values_csv, &self.values, None)?;
        write_graph_json(graph_json, &GraphFile::of(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_dataset, SynthConfig};

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize_dataset(&SynthConfig { n_nodes: 5, n_days: 2, ..Default::default() })
            .unwrap();
        let (v, g) = (dir.path().join("v.csv"), dir.path().join("g.json"));
        ds.write_files(&v, &g).unwrap();
        let back = TrafficDataset::from_files(&v, &g).unwrap();
        assert!(back.values.bit_eq(&ds.values));
        assert_eq!(back.edges, ds.edges);
        assert_eq!(back.start, ds.start);
        let header = std::fs::read_to_string(&v).unwrap();
        assert!(header.starts_with("node_0,node_1,node_2,node_3,node_4\n"));
    }

    #[test]
    fn graph_json_accepts_numeric_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        std::fs::write(
            &p,
            r#"{"step_minutes": 5, "start": {"week": 1, "hour": 2, "minute": 3},
                "nodes": [773869, "b"], "edges": [[0, 1, 2.5]]}"#,
        )
        .unwrap();
        let g = read_graph_json(&p).unwrap();
        assert_eq!(g.nodes, vec!["773869", "b"]);
        assert_eq!(g.edges[0].distance, 2.5);
        assert_eq!(g.start.hour, 2);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        std::fs::write(&p, "node_0,node_1\n1,2\n3\n").unwrap();
        assert!(read_values_csv(&p).is_err());
        std::fs::write(&p, "node_0\nabc\n").unwrap();
        assert!(matches!(read_values_csv(&p), Err(PastError::Parse(_))));
    }
}

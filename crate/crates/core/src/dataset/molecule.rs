//! Pre-featurized molecule graphs as JSON lines.
//!
//! Each non-empty line holds one molecule:
//!
//! ```text
//! {"nodes": [[0.1, 1.0], [0.0, 0.5]], "edges": [[0, 1, [1.0, 0.0, 0.0]]], "target": -0.77}
//! ```
//!
//! `edges` lists each bond once as `[i, j, features]` with 0-based node
//! indices. An integer `target` marks a classification record, a real one a
//! regression record.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetTable, Graph, Target, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct MoleculeRecord {
    nodes: Vec<Vec<f64>>,
    edges: Vec<(usize, usize, Vec<f64>)>,
    target: serde_json::Number,
}

/// Loads a molecule file, inferring the task from its targets: any real
/// target means regression, `{0, 1}` binary, other integers multiclass.
pub fn load_molecule_dataset(path: impl AsRef<Path>) -> Result<DatasetTable> {
    load(path.as_ref(), None)
}

/// Loads a molecule file with an explicit task.
pub fn load_molecule_dataset_as(path: impl AsRef<Path>, task: Task) -> Result<DatasetTable> {
    load(path.as_ref(), Some(task))
}

fn load(path: &Path, task: Option<Task>) -> Result<DatasetTable> {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&file, None, "file not found"),
        _ => e.into(),
    })?;

    let mut d_in: Option<usize> = None;
    let mut d_e: Option<usize> = None;
    let mut parsed = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MoleculeRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(&file, Some(line_no), e.to_string()))?;
        if rec.nodes.is_empty() {
            return Err(Error::format(&file, Some(line_no), "molecule without atoms"));
        }
        for row in &rec.nodes {
            if *d_in.get_or_insert(row.len()) != row.len() {
                return Err(Error::format(
                    &file,
                    Some(line_no),
                    format!("node feature length {} != {}", row.len(), d_in.unwrap()),
                ));
            }
        }
        for (_, _, f) in &rec.edges {
            if *d_e.get_or_insert(f.len()) != f.len() {
                return Err(Error::format(
                    &file,
                    Some(line_no),
                    format!("edge feature length {} != {}", f.len(), d_e.unwrap()),
                ));
            }
        }
        parsed.push((line_no, rec));
    }

    let is_real = |n: &serde_json::Number| !(n.is_u64() || n.is_i64());
    let inferred = task.unwrap_or_else(|| {
        if parsed.iter().any(|(_, r)| is_real(&r.target)) {
            Task::Regression
        } else if parsed.iter().all(|(_, r)| matches!(r.target.as_u64(), Some(0 | 1))) {
            Task::Binary
        } else {
            Task::Multiclass
        }
    });

    let d_in = d_in.unwrap_or(0);
    let d_e = d_e.unwrap_or(0);
    let mut max_class = 0usize;
    let mut graphs = Vec::with_capacity(parsed.len());
    for (line_no, rec) in parsed {
        let n = rec.nodes.len();
        let target = if inferred.is_classification() {
            let c = rec.target.as_u64().ok_or_else(|| {
                Error::format(&file, Some(line_no), "classification target must be a non-negative integer")
            })? as usize;
            max_class = max_class.max(c);
            Target::Class(c)
        } else {
            Target::Value(rec.target.as_f64().unwrap_or(f64::NAN))
        };
        let feats = Tensor::matrix(n, d_in, rec.nodes.into_iter().flatten().collect())?;
        let edges: Vec<(usize, usize)> = rec.edges.iter().map(|(i, j, _)| (*i, *j)).collect();
        let edge_feats = (d_e > 0).then(|| {
            Tensor::matrix(
                edges.len(),
                d_e,
                rec.edges.into_iter().flat_map(|(_, _, f)| f).collect(),
            )
            .expect("edge feature shape")
        });
        let g = Graph::new(n, edges, feats, edge_feats, target)
            .map_err(|e| Error::format(&file, Some(line_no), e.to_string()))?;
        graphs.push(g);
    }
    let class_count = match inferred {
        Task::Binary => Some(2),
        Task::Multiclass => Some(max_class + 1),
        Task::Regression => None,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DatasetTable::new(name, graphs, inferred, class_count)
}

/// Writes a dataset in the molecule line format.
pub fn write_molecule_dataset(ds: &DatasetTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for g in ds.graphs() {
        let x = g.node_features();
        let nodes = (0..g.node_count()).map(|i| x.row(i).to_vec()).collect();
        let edges = g
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                let f = g.edge_features().map(|ef| ef.row(e).to_vec()).unwrap_or_default();
                (i, j, f)
            })
            .collect();
        let target = match g.target() {
            Target::Class(c) => serde_json::Number::from(c as u64),
            Target::Value(v) => serde_json::Number::from_f64(v)
                .ok_or_else(|| Error::Data(format!("non-finite target {v}")))?,
        };
        let rec = MoleculeRecord { nodes, edges, target };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

//! Reader for the TU graph benchmark text format.
//!
//! A dataset `NAME` is a directory of line-oriented files:
//!
//! | file                        | one line per | content                          |
//! |-----------------------------|--------------|----------------------------------|
//! | `NAME_A.txt`                | directed edge| `i, j` (1-indexed global nodes)  |
//! | `NAME_graph_indicator.txt`  | node         | 1-indexed graph id               |
//! | `NAME_graph_labels.txt`     | graph        | integer (or real) label          |
//! | `NAME_node_labels.txt`      | node         | integer label (optional)         |
//! | `NAME_node_attributes.txt`  | node         | comma-separated reals (optional) |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetTable, Graph, Target, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TuOptions {
    /// Largest degree with its own one-hot bucket when neither attributes
    /// nor node labels exist; higher degrees share the last bucket.
    pub max_degree: usize,
}

impl Default for TuOptions {
    fn default() -> Self {
        TuOptions { max_degree: 64 }
    }
}

pub fn load_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<DatasetTable> {
    load_tu_dataset_with(dir, name, TuOptions::default())
}

struct Lines {
    file: String,
    lines: Vec<(usize, String)>,
}

fn read_lines(path: &Path, required: bool) -> Result<Option<Lines>> {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && !required => return Ok(None),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::format(file, None, "missing mandatory file"))
        }
        Err(e) => return Err(e.into()),
    };
    let lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    Ok(Some(Lines { file, lines }))
}

fn parse_usize(file: &str, line: usize, s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::format(file, Some(line), format!("expected a positive integer, got {s:?}")))
}

fn path_for(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

pub fn load_tu_dataset_with(dir: impl AsRef<Path>, name: &str, opts: TuOptions) -> Result<DatasetTable> {
    let dir = dir.as_ref();
    let edges_file = read_lines(&path_for(dir, name, "A"), true)?.unwrap();
    let indicator = read_lines(&path_for(dir, name, "graph_indicator"), true)?.unwrap();
    let graph_labels = read_lines(&path_for(dir, name, "graph_labels"), true)?.unwrap();
    let node_labels = read_lines(&path_for(dir, name, "node_labels"), false)?;
    let node_attrs = read_lines(&path_for(dir, name, "node_attributes"), false)?;

    // node -> (graph, local index)
    let total_nodes = indicator.lines.len();
    let graph_count = graph_labels.lines.len();
    let mut node_graph = Vec::with_capacity(total_nodes);
    let mut node_local = Vec::with_capacity(total_nodes);
    let mut sizes = vec![0usize; graph_count];
    for (line, text) in &indicator.lines {
        let gid = parse_usize(&indicator.file, *line, text)?;
        if gid == 0 || gid > graph_count {
            return Err(Error::format(
                &indicator.file,
                Some(*line),
                format!("graph id {gid} outside 1..={graph_count}"),
            ));
        }
        node_graph.push(gid - 1);
        node_local.push(sizes[gid - 1]);
        sizes[gid - 1] += 1;
    }

    let mut edge_sets: Vec<std::collections::BTreeSet<(usize, usize)>> =
        vec![Default::default(); graph_count];
    for (line, text) in &edges_file.lines {
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(&edges_file.file, Some(*line), "expected `i, j`"));
        };
        let a = parse_usize(&edges_file.file, *line, a)?;
        let b = parse_usize(&edges_file.file, *line, b)?;
        for v in [a, b] {
            if v == 0 || v > total_nodes {
                return Err(Error::format(
                    &edges_file.file,
                    Some(*line),
                    format!("node index {v} outside 1..={total_nodes}"),
                ));
            }
        }
        let (a, b) = (a - 1, b - 1);
        if node_graph[a] != node_graph[b] {
            return Err(Error::format(
                &edges_file.file,
                Some(*line),
                format!("edge joins nodes of different graphs ({} and {})", a + 1, b + 1),
            ));
        }
        if a == b {
            continue;
        }
        let (la, lb) = (node_local[a], node_local[b]);
        edge_sets[node_graph[a]].insert((la.min(lb), la.max(lb)));
    }

    // Node features: attributes, else one-hot labels, else one-hot degree.
    let features: Vec<Vec<f64>> = if let Some(attrs) = &node_attrs {
        if attrs.lines.len() != total_nodes {
            return Err(Error::format(
                &attrs.file,
                None,
                format!("{} lines for {total_nodes} nodes", attrs.lines.len()),
            ));
        }
        let mut rows = Vec::with_capacity(total_nodes);
        for (line, text) in &attrs.lines {
            let row = text
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(&attrs.file, Some(*line), e.to_string()))?;
            if let Some(first) = rows.first().map(Vec::len) {
                if row.len() != first {
                    return Err(Error::format(&attrs.file, Some(*line), "inconsistent attribute count"));
                }
            }
            rows.push(row);
        }
        rows
    } else if let Some(labels) = &node_labels {
        if labels.lines.len() != total_nodes {
            return Err(Error::format(
                &labels.file,
                None,
                format!("{} lines for {total_nodes} nodes", labels.lines.len()),
            ));
        }
        let parsed = labels
            .lines
            .iter()
            .map(|(line, t)| {
                t.parse::<i64>()
                    .map_err(|e| Error::format(&labels.file, Some(*line), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let ids: BTreeMap<i64, usize> = parsed
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect();
        parsed
            .iter()
            .map(|l| {
                let mut row = vec![0.0; ids.len()];
                row[ids[l]] = 1.0;
                row
            })
            .collect()
    } else {
        let mut deg = vec![0usize; total_nodes];
        // local degree via edge sets
        let mut global_of = vec![Vec::new(); graph_count];
        for (node, &g) in node_graph.iter().enumerate() {
            global_of[g].push(node);
        }
        for (g, set) in edge_sets.iter().enumerate() {
            for &(i, j) in set {
                deg[global_of[g][i]] += 1;
                deg[global_of[g][j]] += 1;
            }
        }
        let observed = deg.iter().copied().max().unwrap_or(0);
        let cap = observed.min(opts.max_degree);
        deg.iter()
            .map(|&d| {
                let mut row = vec![0.0; cap + 1];
                row[d.min(cap)] = 1.0;
                row
            })
            .collect()
    };
    let d_in = features.first().map_or(0, Vec::len);

    // Graph labels: integers remapped to 0..c, otherwise regression values.
    let int_labels: Option<Vec<i64>> = graph_labels
        .lines
        .iter()
        .map(|(_, t)| t.parse::<i64>().ok())
        .collect();
    let (task, class_count, targets): (Task, Option<usize>, Vec<Target>) = match int_labels {
        Some(labels) => {
            let ids: BTreeMap<i64, usize> = labels
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, l)| (l, i))
                .collect();
            let task = if ids.len() == 2 { Task::Binary } else { Task::Multiclass };
            (
                task,
                Some(ids.len()),
                labels.iter().map(|l| Target::Class(ids[l])).collect(),
            )
        }
        None => {
            let values = graph_labels
                .lines
                .iter()
                .map(|(line, t)| {
                    t.parse::<f64>()
                        .map(Target::Value)
                        .map_err(|e| Error::format(&graph_labels.file, Some(*line), e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            (Task::Regression, None, values)
        }
    };

    let mut per_graph_rows: Vec<Vec<f64>> = sizes.iter().map(|&n| Vec::with_capacity(n * d_in)).collect();
    for (node, row) in features.iter().enumerate() {
        per_graph_rows[node_graph[node]].extend_from_slice(row);
    }
    let graphs = per_graph_rows
        .into_iter()
        .zip(edge_sets)
        .zip(targets)
        .enumerate()
        .map(|(g, ((rows, edges), target))| {
            let feats = Tensor::matrix(sizes[g], d_in, rows)?;
            Graph::new(sizes[g], edges.into_iter().collect(), feats, None, target)
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetTable::new(name, graphs, task, class_count)
}

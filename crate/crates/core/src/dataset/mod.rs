//! Labelled graphs, dataset loaders, fold splitting and minibatching.

mod batch;
mod folds;
mod molecule;
pub mod synthetic;
mod tu;

pub use batch::{batch_graphs, BatchMode, GraphBatch, GraphEdges};
pub use folds::{stratified_kfold, FoldSplit};
pub use molecule::{load_molecule_dataset, load_molecule_dataset_as, write_molecule_dataset};
pub use tu::{load_tu_dataset, load_tu_dataset_with, TuOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multiclass,
    Binary,
    Regression,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(c),
            Target::Value(_) => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Target::Class(c) => c as f64,
            Target::Value(v) => v,
        }
    }
}

/// One labelled undirected graph.
///
/// Edges are stored once per unordered pair as `(min, max)`; the dense
/// adjacency and neighbour views mirror them. Self-loops are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    node_features: Tensor<f64>,
    edge_features: Option<Tensor<f64>>,
    target: Target,
}

impl Graph {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        node_features: Tensor<f64>,
        edge_features: Option<Tensor<f64>>,
        target: Target,
    ) -> Result<Self> {
        if node_features.shape().len() != 2 || node_features.rows() != n {
            return Err(Error::Data(format!(
                "node feature matrix {:?} does not have {n} rows",
                node_features.shape()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut canon = Vec::with_capacity(edges.len());
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::Data(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::Data(format!("self-loop on node {i}")));
            }
            let e = (i.min(j), i.max(j));
            if !seen.insert(e) {
                return Err(Error::Data(format!("duplicate edge ({i}, {j})")));
            }
            canon.push(e);
        }
        if let Some(ef) = &edge_features {
            if ef.shape().len() != 2 || ef.rows() != canon.len() {
                return Err(Error::Data(format!(
                    "edge feature matrix {:?} does not match {} edges",
                    ef.shape(),
                    canon.len()
                )));
            }
        }
        Ok(Graph {
            n,
            edges: canon,
            node_features,
            edge_features,
            target,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Tensor<f64> {
        &self.node_features
    }

    pub fn edge_features(&self) -> Option<&Tensor<f64>> {
        self.edge_features.as_ref()
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// Dense symmetric `n×n` 0/1 adjacency with zero diagonal.
    pub fn adjacency(&self) -> Tensor<f64> {
        let mut a = Tensor::zeros(&[self.n, self.n]);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Sorted neighbour lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Copy of this graph keeping only the listed undirected edges (by index).
    pub fn with_edge_subset(&self, keep: &[usize]) -> Graph {
        let edges = keep.iter().map(|&e| self.edges[e]).collect();
        let edge_features = self.edge_features.as_ref().map(|ef| {
            let d = ef.cols();
            let data = keep.iter().flat_map(|&e| ef.row(e).to_vec()).collect();
            Tensor::matrix(keep.len(), d, data).expect("edge subset shape")
        });
        Graph {
            n: self.n,
            edges,
            node_features: self.node_features.clone(),
            edge_features,
            target: self.target,
        }
    }

    /// Relabels nodes so old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n);
        let d = self.node_features.cols();
        let mut feats = Tensor::zeros(&[self.n, d]);
        for i in 0..self.n {
            feats.row_mut(perm[i]).copy_from_slice(self.node_features.row(i));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        Graph {
            n: self.n,
            edges,
            node_features: feats,
            edge_features: self.edge_features.clone(),
            target: self.target,
        }
    }
}

/// A loaded dataset. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    pub name: String,
    graphs: Vec<Graph>,
    task: Task,
    d_in: usize,
    d_e: usize,
    class_count: Option<usize>,
}

impl DatasetTable {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        task: Task,
        class_count: Option<usize>,
    ) -> Result<Self> {
        let d_in = graphs.first().map_or(0, Graph::feature_dim);
        let d_e = graphs
            .iter()
            .find_map(|g| g.edge_features().map(|e| e.cols()))
            .unwrap_or(0);
        for (idx, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d_in {
                return Err(Error::Data(format!(
                    "graph {idx} has {} node features, expected {d_in}",
                    g.feature_dim()
                )));
            }
            if let Some(ef) = g.edge_features() {
                if ef.cols() != d_e {
                    return Err(Error::Data(format!(
                        "graph {idx} has {} edge features, expected {d_e}",
                        ef.cols()
                    )));
                }
            }
            match (task.is_classification(), g.target()) {
                (true, Target::Class(c)) => {
                    let k = class_count.ok_or_else(|| {
                        Error::Data("classification dataset without class count".into())
                    })?;
                    if c >= k {
                        return Err(Error::Data(format!("graph {idx} label {c} >= {k} classes")));
                    }
                }
                (false, Target::Value(_)) => {}
                _ => {
                    return Err(Error::Data(format!(
                        "graph {idx} target {:?} inconsistent with task {task:?}",
                        g.target()
                    )))
                }
            }
        }
        Ok(DatasetTable {
            name: name.into(),
            graphs,
            task,
            d_in,
            d_e,
            class_count,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    /// Edge feature dimension, zero when the dataset has none.
    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn has_edge_features(&self) -> bool {
        self.d_e > 0 && self.graphs.iter().any(|g| g.edge_features().is_some())
    }

    pub fn class_count(&self) -> Option<usize> {
        self.class_count
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::node_count).max().unwrap_or(0)
    }

    pub fn avg_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.node_count() as f64).sum::<f64>() / self.len().max(1) as f64
    }

    pub fn avg_edges(&self) -> f64 {
        self.graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// Dataset restricted to the given graph indices, in order.
    pub fn subset(&self, indices: &[usize]) -> DatasetTable {
        DatasetTable {
            name: self.name.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            task: self.task,
            d_in: self.d_in,
            d_e: self.d_e,
            class_count: self.class_count,
        }
    }

    /// Same dataset with every graph replaced by `f(graph)`.
    pub fn map_graphs(&self, f: impl Fn(&Graph) -> Result<Graph>) -> Result<DatasetTable> {
        let graphs = self.graphs.iter().map(f).collect::<Result<Vec<_>>>()?;
        DatasetTable::new(self.name.clone(), graphs, self.task, self.class_count)
    }
}

use super::{Graph, Target};
use crate::diffusion::{embed_rows, topological_embedding, DiffusionConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which query network the batch feeds.
#[derive(Clone, Copy)]
pub enum BatchMode<'a> {
    /// Topological embeddings are filled in, either computed from `cfg` or
    /// taken from precomputed per-graph diffusion rows (aligned with the
    /// graphs being batched).
    Gmn {
        cfg: &'a DiffusionConfig,
        rows: Option<&'a [&'a Tensor<f64>]>,
    },
    /// Directed edge lists with edge features are filled in.
    MemGnn,
}

/// Directed edges of one graph, each undirected edge listed in both
/// directions. Self-loops are not included.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdges<T> {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `src.len() × d_e` features, `None` when the dataset has none.
    pub feats: Option<Tensor<T>>,
}

impl<T: Scalar> GraphEdges<T> {
    pub fn from_graph(g: &Graph) -> Self {
        let m = g.edge_count();
        let mut src = Vec::with_capacity(2 * m);
        let mut dst = Vec::with_capacity(2 * m);
        for &(i, j) in g.edges() {
            src.extend([i, j]);
            dst.extend([j, i]);
        }
        let feats = g.edge_features().map(|ef| {
            let d = ef.cols();
            let mut data = Vec::with_capacity(2 * m * d);
            for e in 0..m {
                let row: Vec<T> = ef.row(e).iter().map(|&v| T::lit(v)).collect();
                data.extend_from_slice(&row);
                data.extend_from_slice(&row);
            }
            Tensor::matrix(2 * m, d, data).expect("edge feature shape")
        });
        GraphEdges { src, dst, feats }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Zero-padded minibatch. Rank-3 tensors are `B × n_max × ·`.
#[derive(Clone, Debug)]
pub struct GraphBatch<T> {
    pub n_max: usize,
    pub node_counts: Vec<usize>,
    pub node_feats: Tensor<T>,
    pub adjacency: Tensor<T>,
    /// `B·n_max` flags, `true` for real nodes.
    pub node_mask: Vec<bool>,
    /// Present in GMN mode.
    pub topo_embed: Option<Tensor<T>>,
    /// Present in MemGNN mode, one entry per graph.
    pub edges: Vec<GraphEdges<T>>,
    pub targets: Vec<Target>,
}

pub fn batch_graphs<T: Scalar>(graphs: &[&Graph], n_max: usize, mode: BatchMode<'_>) -> Result<GraphBatch<T>> {
    for (idx, g) in graphs.iter().enumerate() {
        if g.node_count() > n_max {
            return Err(Error::Contract(format!(
                "graph {idx} has {} nodes, more than n_max = {n_max}",
                g.node_count()
            )));
        }
    }
    let b = graphs.len();
    let d_in = graphs.first().map_or(0, |g| g.feature_dim());
    let mut node_feats = Tensor::zeros(&[b, n_max, d_in]);
    let mut adjacency = Tensor::zeros(&[b, n_max, n_max]);
    let mut node_mask = vec![false; b * n_max];
    let mut topo_embed = match mode {
        BatchMode::Gmn { .. } => Some(Tensor::zeros(&[b, n_max, n_max])),
        BatchMode::MemGnn => None,
    };
    let mut edges = Vec::new();

    for (k, g) in graphs.iter().enumerate() {
        let n = g.node_count();
        let x = g.node_features();
        let feat_block = &mut node_feats.data_mut()[k * n_max * d_in..];
        for i in 0..n {
            for (dst, &v) in feat_block[i * d_in..(i + 1) * d_in].iter_mut().zip(x.row(i)) {
                *dst = T::lit(v);
            }
        }
        let adj_block = &mut adjacency.data_mut()[k * n_max * n_max..];
        for &(i, j) in g.edges() {
            adj_block[i * n_max + j] = T::one();
            adj_block[j * n_max + i] = T::one();
        }
        node_mask[k * n_max..k * n_max + n].iter_mut().for_each(|m| *m = true);

        match mode {
            BatchMode::Gmn { cfg, rows } => {
                let embed: Tensor<T> = match rows {
                    Some(rows) => embed_rows(&rows[k].cast(), cfg, n_max)?,
                    None => topological_embedding(g, cfg, n_max)?,
                };
                let block = &mut topo_embed.as_mut().unwrap().data_mut()[k * n_max * n_max..];
                block[..n * n_max].copy_from_slice(embed.data());
            }
            BatchMode::MemGnn => edges.push(GraphEdges::from_graph(g)),
        }
    }

    Ok(GraphBatch {
        n_max,
        node_counts: graphs.iter().map(|g| g.node_count()).collect(),
        node_feats,
        adjacency,
        node_mask,
        topo_embed,
        edges,
        targets: graphs.iter().map(|g| g.target()).collect(),
    })
}

impl<T: Scalar> GraphBatch<T> {
    pub fn len(&self) -> usize {
        self.node_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_counts.is_empty()
    }

    pub fn mask(&self, b: usize) -> &[bool] {
        &self.node_mask[b * self.n_max..(b + 1) * self.n_max]
    }

    fn block(t: &Tensor<T>, b: usize) -> Tensor<T> {
        let s = t.shape();
        let size = s[1] * s[2];
        Tensor::matrix(s[1], s[2], t.data()[b * size..(b + 1) * size].to_vec()).unwrap()
    }

    /// `n_max × d_in` padded features of graph `b`.
    pub fn padded_features(&self, b: usize) -> Tensor<T> {
        Self::block(&self.node_feats, b)
    }

    /// `n_max × n_max` padded topological embedding of graph `b`.
    pub fn padded_topo(&self, b: usize) -> Option<Tensor<T>> {
        self.topo_embed.as_ref().map(|t| Self::block(t, b))
    }

    /// Features of the real nodes of graph `b`.
    pub fn features(&self, b: usize) -> Tensor<T> {
        self.padded_features(b).slice_rows(0, self.node_counts[b])
    }

    /// Topological embedding rows of the real nodes of graph `b`.
    pub fn topo(&self, b: usize) -> Option<Tensor<T>> {
        self.padded_topo(b).map(|t| t.slice_rows(0, self.node_counts[b]))
    }
}

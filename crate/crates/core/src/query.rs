//! Query networks producing the initial node queries.
//!
//! * GMN fuses sorted topological embeddings with node features through a
//!   two-layer feed-forward network, without message passing.
//! * MemGNN runs edge-aware graph attention (e-GAT) layers whose attention
//!   logits also see the transformed edge features.

use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::dataset::GraphEdges;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn glorot<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<T> {
    rng::uniform(rng, &[rows, cols], (6.0 / (rows + cols) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmnQueryParams<T> {
    /// `n_max × d_in`, applied to the topological embedding.
    pub w0: Tensor<T>,
    /// `2·d_in × d_0`, applied to `[σ(S W0) ‖ X]`.
    pub w1: Tensor<T>,
}

impl<T: Scalar> GmnQueryParams<T> {
    pub fn init(rng: &mut Rng, n_max: usize, d_in: usize, d0: usize) -> Self {
        GmnQueryParams {
            w0: glorot(rng, n_max, d_in),
            w1: glorot(rng, 2 * d_in, d0),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> GmnQueryVars<'t, T> {
        GmnQueryVars {
            w0: tape.param(self.w0.clone()),
            w1: tape.param(self.w1.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GmnQueryVars<'t, T: Scalar> {
    pub w0: Var<'t, T>,
    pub w1: Var<'t, T>,
}

/// `Q0 = σ([σ(S W0) ‖ X] W1)`.
pub fn gmn_query<'t, T: Scalar>(
    topo: Var<'t, T>,
    features: Var<'t, T>,
    params: &GmnQueryVars<'t, T>,
    slope: T,
) -> Result<Var<'t, T>> {
    let n_max = params.w0.shape()[0];
    if topo.shape()[1] != n_max {
        return Err(Error::Config(format!(
            "topological embedding has {} columns but the model was built for n_max = {n_max}",
            topo.shape()[1]
        )));
    }
    let s = topo.matmul(params.w0)?.leaky_relu(slope);
    Ok(s.concat_cols(features)?.matmul(params.w1)?.leaky_relu(slope))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EgatLayerParams<T> {
    /// Node transform `d × d'`.
    pub w_node: Tensor<T>,
    /// Edge transform `d_e × d'_e`.
    pub w_edge: Tensor<T>,
    /// Attention vector `(2·d' + d'_e) × 1` over `[W_n h_i ‖ W_n h_j ‖ W_e h_ij]`.
    pub attn: Tensor<T>,
}

impl<T: Scalar> EgatLayerParams<T> {
    pub fn init(rng: &mut Rng, d: usize, d_out: usize, d_e: usize, d_e_out: usize) -> Self {
        EgatLayerParams {
            w_node: glorot(rng, d, d_out),
            w_edge: glorot(rng, d_e, d_e_out),
            attn: glorot(rng, 2 * d_out + d_e_out, 1),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> EgatLayerVars<'t, T> {
        EgatLayerVars {
            w_node: tape.param(self.w_node.clone()),
            w_edge: tape.param(self.w_edge.clone()),
            attn: tape.param(self.attn.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EgatLayerVars<'t, T: Scalar> {
    pub w_node: Var<'t, T>,
    pub w_edge: Var<'t, T>,
    pub attn: Var<'t, T>,
}

impl<'t, T: Scalar> EgatLayerVars<'t, T> {
    pub fn vars(&self) -> [Var<'t, T>; 3] {
        [self.w_node, self.w_edge, self.attn]
    }
}

/// Directed neighbour lists of one graph with a self-loop on every node.
///
/// Edge `e` goes from `src[e]` (the attending node) to `dst[e]` (the
/// neighbour). The self-loops come last, after `edge_count` real edges.
#[derive(Clone, Debug)]
pub struct AttentionEdges {
    pub node_count: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub edge_count: usize,
}

impl AttentionEdges {
    pub fn new<T: Scalar>(node_count: usize, edges: &GraphEdges<T>) -> Result<Self> {
        if let Some(&bad) = edges.src.iter().chain(&edges.dst).find(|&&v| v >= node_count) {
            return Err(Error::Data(format!("edge endpoint {bad} out of range for {node_count} nodes")));
        }
        let src: Vec<usize> = edges.src.iter().copied().chain(0..node_count).collect();
        let dst: Vec<usize> = edges.dst.iter().copied().chain(0..node_count).collect();
        Ok(AttentionEdges {
            node_count,
            src: src.into(),
            dst: dst.into(),
            edge_count: edges.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Edge features for every attention edge (self-loops included).
///
/// With dataset features, real edges use them and self-loops use zeros.
/// Without, every edge uses the shared learned vector `shared` (`1 × d_e`).
pub fn attention_edge_features<'t, T: Scalar>(
    tape: &'t Tape<T>,
    edges: &AttentionEdges,
    feats: Option<&Tensor<T>>,
    shared: Option<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    match (feats, shared) {
        (Some(f), _) => {
            if f.rows() != edges.edge_count {
                return Err(Error::Data(format!(
                    "{} edge feature rows for {} listed edges",
                    f.rows(),
                    edges.edge_count
                )));
            }
            let d_e = f.cols();
            let mut data = f.data().to_vec();
            data.resize(edges.len() * d_e, T::zero());
            Ok(tape.constant(Tensor::matrix(edges.len(), d_e, data)?))
        }
        (None, Some(v)) => tape.constant(Tensor::ones(&[edges.len(), 1])).matmul(v),
        (None, None) => Err(Error::Data("edge features missing and no shared edge vector".into())),
    }
}

/// Attention coefficients, one per attention edge, normalized over each
/// source node's neighbourhood.
pub fn egat_attention<'t, T: Scalar>(
    h: Var<'t, T>,
    edges: &AttentionEdges,
    edge_feats: Var<'t, T>,
    params: &EgatLayerVars<'t, T>,
    slope: T,
) -> Result<Var<'t, T>> {
    let hn = h.matmul(params.w_node)?;
    attention_from_transformed(hn, edges, edge_feats, params, slope)
}

fn attention_from_transformed<'t, T: Scalar>(
    hn: Var<'t, T>,
    edges: &AttentionEdges,
    edge_feats: Var<'t, T>,
    params: &EgatLayerVars<'t, T>,
    slope: T,
) -> Result<Var<'t, T>> {
    if edge_feats.shape()[0] != edges.len() {
        return Err(Error::Data(format!(
            "{} edge feature rows for {} attention edges",
            edge_feats.shape()[0],
            edges.len()
        )));
    }
    let d = hn.shape()[1];
    let he = edge_feats.matmul(params.w_edge)?;
    let d_e = he.shape()[1];
    if params.attn.shape() != [2 * d + d_e, 1] {
        return Err(Error::shape("egat attention vector", &params.attn.shape(), &[2 * d + d_e, 1]));
    }
    let a_src = params.attn.slice_rows(0, d)?;
    let a_dst = params.attn.slice_rows(d, 2 * d)?;
    let a_edge = params.attn.slice_rows(2 * d, 2 * d + d_e)?;
    let score_src = hn.matmul(a_src)?.gather_rows(edges.src.clone())?;
    let score_dst = hn.matmul(a_dst)?.gather_rows(edges.dst.clone())?;
    let score_edge = he.matmul(a_edge)?;
    score_src
        .add(score_dst)?
        .add(score_edge)?
        .leaky_relu(slope)
        .segment_softmax(edges.src.clone())
}

/// `h'_i = σ(Σ_j α_ij W_n h_j)` over neighbours including `i` itself.
pub fn egat_layer<'t, T: Scalar>(
    h: Var<'t, T>,
    edges: &AttentionEdges,
    edge_feats: Var<'t, T>,
    params: &EgatLayerVars<'t, T>,
    slope: T,
) -> Result<Var<'t, T>> {
    let hn = h.matmul(params.w_node)?;
    let alpha = attention_from_transformed(hn, edges, edge_feats, params, slope)?;
    Ok(hn
        .gather_rows(edges.dst.clone())?
        .scale_rows(alpha)?
        .segment_sum(edges.src.clone(), edges.node_count)?
        .leaky_relu(slope))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemGnnQueryParams<T> {
    /// Input affine map `d_in × d`.
    pub w_in: Tensor<T>,
    /// `1 × d`.
    pub b_in: Tensor<T>,
    pub layers: Vec<EgatLayerParams<T>>,
    /// Learned `1 × d_e` edge feature for datasets without edge features.
    pub shared_edge: Option<Tensor<T>>,
}

impl<T: Scalar> MemGnnQueryParams<T> {
    /// `d_e` is the dataset's edge feature size, or the size of the shared
    /// learned edge vector when `learn_shared_edge` is set.
    pub fn init(
        rng: &mut Rng,
        d_in: usize,
        hidden: usize,
        d_e: usize,
        edge_hidden: usize,
        layers: usize,
        learn_shared_edge: bool,
    ) -> Self {
        let w_in = glorot(rng, d_in, hidden);
        let layers = (0..layers)
            .map(|_| EgatLayerParams::init(rng, hidden, hidden, d_e, edge_hidden))
            .collect();
        let shared_edge = learn_shared_edge.then(|| rng::uniform(rng, &[1, d_e], 1.0 / (d_e as f64).sqrt()));
        MemGnnQueryParams {
            w_in,
            b_in: Tensor::zeros(&[1, hidden]),
            layers,
            shared_edge,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> MemGnnQueryVars<'t, T> {
        MemGnnQueryVars {
            w_in: tape.param(self.w_in.clone()),
            b_in: tape.param(self.b_in.clone()),
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            shared_edge: self.shared_edge.as_ref().map(|t| tape.param(t.clone())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MemGnnQueryVars<'t, T: Scalar> {
    pub w_in: Var<'t, T>,
    pub b_in: Var<'t, T>,
    pub layers: Vec<EgatLayerVars<'t, T>>,
    pub shared_edge: Option<Var<'t, T>>,
}

/// Input affine map followed by e-GAT layers, each with a residual
/// connection from its input.
pub fn memgnn_query<'t, T: Scalar>(
    features: Var<'t, T>,
    edges: &AttentionEdges,
    edge_feats: Option<&Tensor<T>>,
    params: &MemGnnQueryVars<'t, T>,
    slope: T,
) -> Result<Var<'t, T>> {
    let tape = features.tape();
    let mut h = features.matmul(params.w_in)?.add_row(params.b_in)?;
    if params.layers.is_empty() {
        return Ok(h);
    }
    let ef = attention_edge_features(tape, edges, edge_feats, params.shared_edge)?;
    for layer in &params.layers {
        h = egat_layer(h, edges, ef, layer, slope)?.add(h)?;
    }
    Ok(h)
}

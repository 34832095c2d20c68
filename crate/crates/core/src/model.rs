//! GMN and MemGNN models: a query network, a stack of memory layers and a
//! prediction head.

use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{Graph, GraphBatch, GraphEdges, Task};
use crate::diffusion::{embed_rows, topological_embedding, DiffusionConfig};
use crate::error::{Error, Result};
use crate::memory::{stacked_forward, AssignmentMatrix, MemoryLayerParams, MemoryLayerVars};
use crate::query::{
    gmn_query, memgnn_query, AttentionEdges, GmnQueryParams, GmnQueryVars, MemGnnQueryParams, MemGnnQueryVars,
};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gmn,
    MemGnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub task: Task,
    /// Node feature size.
    pub d_in: usize,
    /// Dataset edge feature size, zero when absent.
    pub d_e: usize,
    /// Width of the topological embedding (GMN).
    pub n_max: usize,
    /// Number of logits (classes) or 1 for regression.
    pub outputs: usize,
    pub hidden_dim: usize,
    /// Keys per memory layer; must decrease strictly and end at 1.
    pub key_schedule: Vec<usize>,
    pub heads: usize,
    pub temperature: f64,
    pub leaky_slope: f64,
    /// e-GAT layers (MemGNN).
    pub egat_layers: usize,
    /// Transformed edge feature size inside e-GAT.
    pub edge_hidden: usize,
    /// Size of the learned edge vector used when the dataset has no edge features.
    pub shared_edge_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let ks = &self.key_schedule;
        if ks.is_empty() {
            return Err(Error::Config("key_schedule must not be empty".into()));
        }
        if ks.last() != Some(&1) {
            return Err(Error::Config(format!("key_schedule {ks:?} must end with 1")));
        }
        if ks.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("key_schedule {ks:?} must be strictly decreasing")));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.d_in == 0 {
            return Err(Error::Config("hidden_dim and d_in must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky_slope {} must lie in (0, 1)", self.leaky_slope)));
        }
        if self.outputs == 0 {
            return Err(Error::Config("outputs must be positive".into()));
        }
        if self.kind == ModelKind::Gmn && self.n_max == 0 {
            return Err(Error::Config("GMN needs n_max > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Memory keys, only moved by the epoch-end clustering step.
    Keys,
    Weights,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryParams<T> {
    Gmn(GmnQueryParams<T>),
    MemGnn(MemGnnQueryParams<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub query: QueryParams<T>,
    pub layers: Vec<MemoryLayerParams<T>>,
    /// `hidden × outputs`.
    pub head_w: Tensor<T>,
    /// `1 × outputs`.
    pub head_b: Tensor<T>,
}

/// Input of one graph to the model.
#[derive(Clone, Debug)]
pub struct GraphInput<T> {
    /// `n × d_in`.
    pub features: Tensor<T>,
    /// `n × n_max`, GMN only.
    pub topo: Option<Tensor<T>>,
    /// MemGNN only.
    pub edges: Option<GraphEdges<T>>,
    /// Rows flagged `false` are padding.
    pub mask: Option<Vec<bool>>,
}

impl<T: Scalar> GraphInput<T> {
    /// Unpadded input of one graph. GMN inputs carry the topological
    /// embedding, built from precomputed diffusion `rows` when given.
    pub fn from_graph(
        g: &Graph,
        kind: ModelKind,
        cfg: &DiffusionConfig,
        n_max: usize,
        rows: Option<&Tensor<f64>>,
    ) -> Result<Self> {
        let features = g.node_features().cast();
        Ok(match kind {
            ModelKind::Gmn => {
                if g.node_count() > n_max {
                    return Err(Error::Contract(format!(
                        "graph with {} nodes exceeds n_max = {n_max}",
                        g.node_count()
                    )));
                }
                let topo = match rows {
                    Some(r) => embed_rows(&r.cast(), cfg, n_max)?,
                    None => topological_embedding(g, cfg, n_max)?,
                };
                GraphInput {
                    features,
                    topo: Some(topo),
                    edges: None,
                    mask: None,
                }
            }
            ModelKind::MemGnn => GraphInput {
                features,
                topo: None,
                edges: Some(GraphEdges::from_graph(g)),
                mask: None,
            },
        })
    }

    /// Real nodes of graph `b` only.
    pub fn from_batch(batch: &GraphBatch<T>, b: usize) -> Self {
        GraphInput {
            features: batch.features(b),
            topo: batch.topo(b),
            edges: batch.edges.get(b).cloned(),
            mask: None,
        }
    }

    /// All `n_max` rows of graph `b`, padding masked out.
    pub fn padded_from_batch(batch: &GraphBatch<T>, b: usize) -> Self {
        GraphInput {
            features: batch.padded_features(b),
            topo: batch.padded_topo(b),
            edges: batch.edges.get(b).cloned(),
            mask: Some(batch.mask(b).to_vec()),
        }
    }
}

pub struct BoundModel<'t, T: Scalar> {
    kind: BoundQuery<'t, T>,
    pub layers: Vec<MemoryLayerVars<'t, T>>,
    pub head_w: Var<'t, T>,
    pub head_b: Var<'t, T>,
    slope: T,
}

enum BoundQuery<'t, T: Scalar> {
    Gmn(GmnQueryVars<'t, T>),
    MemGnn(MemGnnQueryVars<'t, T>),
}

/// Output of one graph's forward pass.
pub struct GraphForward<'t, T: Scalar> {
    /// `1 × outputs`: logits or the regression estimate.
    pub output: Var<'t, T>,
    /// Per-layer soft assignments.
    pub assignments: Vec<Var<'t, T>>,
}

/// Detached prediction for one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub output: Tensor<T>,
    pub assignments: Vec<AssignmentMatrix<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let h = config.hidden_dim;
        let query = match config.kind {
            ModelKind::Gmn => QueryParams::Gmn(GmnQueryParams::init(&mut rng, config.n_max, config.d_in, h)),
            ModelKind::MemGnn => {
                let shared = config.d_e == 0;
                let d_e = if shared { config.shared_edge_dim } else { config.d_e };
                QueryParams::MemGnn(MemGnnQueryParams::init(
                    &mut rng,
                    config.d_in,
                    h,
                    d_e,
                    config.edge_hidden,
                    config.egat_layers,
                    shared,
                ))
            }
        };
        let tau = T::lit(config.temperature);
        let layers = config
            .key_schedule
            .iter()
            .map(|&n_out| MemoryLayerParams::init(&mut rng, config.heads, n_out, h, h, tau))
            .collect::<Result<Vec<_>>>()?;
        let bound = (6.0 / (h + config.outputs) as f64).sqrt();
        let head_w = rng::uniform(&mut rng, &[h, config.outputs], bound);
        Ok(Model {
            head_b: Tensor::zeros(&[1, config.outputs]),
            config,
            query,
            layers,
            head_w,
        })
    }

    /// Every trainable tensor with its checkpoint name and group, in the
    /// same order as [`params_mut`](Self::params_mut) and [`BoundModel::vars`].
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>, ParamGroup)> {
        let w = ParamGroup::Weights;
        let mut out = Vec::new();
        match &self.query {
            QueryParams::Gmn(p) => {
                out.push(("query.w0".to_string(), &p.w0, w));
                out.push(("query.w1".to_string(), &p.w1, w));
            }
            QueryParams::MemGnn(p) => {
                out.push(("query.w_in".to_string(), &p.w_in, w));
                out.push(("query.b_in".to_string(), &p.b_in, w));
                for (i, l) in p.layers.iter().enumerate() {
                    out.push((format!("query.egat{i}.w_node"), &l.w_node, w));
                    out.push((format!("query.egat{i}.w_edge"), &l.w_edge, w));
                    out.push((format!("query.egat{i}.attn"), &l.attn, w));
                }
                if let Some(s) = &p.shared_edge {
                    out.push(("query.shared_edge".to_string(), s, w));
                }
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("memory{i}.keys"), &l.keys, ParamGroup::Keys));
            out.push((format!("memory{i}.head_mix"), &l.head_mix, w));
            out.push((format!("memory{i}.head_bias"), &l.head_bias, w));
            out.push((format!("memory{i}.proj"), &l.proj, w));
        }
        out.push(("head.w".to_string(), &self.head_w, w));
        out.push(("head.b".to_string(), &self.head_b, w));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        match &mut self.query {
            QueryParams::Gmn(p) => {
                out.push(&mut p.w0);
                out.push(&mut p.w1);
            }
            QueryParams::MemGnn(p) => {
                out.push(&mut p.w_in);
                out.push(&mut p.b_in);
                for l in &mut p.layers {
                    out.push(&mut l.w_node);
                    out.push(&mut l.w_edge);
                    out.push(&mut l.attn);
                }
                if let Some(s) = &mut p.shared_edge {
                    out.push(s);
                }
            }
        }
        for l in &mut self.layers {
            out.push(&mut l.keys);
            out.push(&mut l.head_mix);
            out.push(&mut l.head_bias);
            out.push(&mut l.proj);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        self.named_params().into_iter().map(|(_, _, g)| g).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t, _)| t.len()).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundModel<'t, T> {
        let slope = T::lit(self.config.leaky_slope);
        let kind = match &self.query {
            QueryParams::Gmn(p) => BoundQuery::Gmn(p.bind(tape)),
            QueryParams::MemGnn(p) => BoundQuery::MemGnn(p.bind(tape)),
        };
        BoundModel {
            kind,
            layers: self.layers.iter().map(|l| l.bind(tape, slope)).collect(),
            head_w: tape.param(self.head_w.clone()),
            head_b: tape.param(self.head_b.clone()),
            slope,
        }
    }

    /// Forward pass without dropout, detached from any tape.
    pub fn predict(&self, input: &GraphInput<T>) -> Result<Prediction<T>> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let fwd = bound.forward(&tape, input, None)?;
        Ok(Prediction {
            output: fwd.output.value().as_ref().clone(),
            assignments: fwd
                .assignments
                .iter()
                .enumerate()
                .map(|(i, c)| AssignmentMatrix {
                    values: c.value().as_ref().clone(),
                    layer_index: i,
                })
                .collect(),
        })
    }

    /// Sum of all key entries' bit patterns; changes whenever any key changes.
    pub fn key_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.keys.data() {
                for b in v.to_f64_lossy().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Dropout applied to the initial queries during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

impl<'t, T: Scalar> BoundModel<'t, T> {
    /// All leaves in [`Model::named_params`] order.
    pub fn vars(&self) -> Vec<Var<'t, T>> {
        let mut out = Vec::new();
        match &self.kind {
            BoundQuery::Gmn(v) => out.extend([v.w0, v.w1]),
            BoundQuery::MemGnn(v) => {
                out.extend([v.w_in, v.b_in]);
                for l in &v.layers {
                    out.extend(l.vars());
                }
                out.extend(v.shared_edge);
            }
        }
        for l in &self.layers {
            out.extend(l.vars());
        }
        out.extend([self.head_w, self.head_b]);
        out
    }

    /// Initial queries `Q0` of one graph.
    pub fn queries(&self, tape: &'t Tape<T>, input: &GraphInput<T>) -> Result<Var<'t, T>> {
        let x = tape.constant(input.features.clone());
        let q = match &self.kind {
            BoundQuery::Gmn(p) => {
                let topo = input
                    .topo
                    .as_ref()
                    .ok_or_else(|| Error::Data("GMN input without topological embedding".into()))?;
                gmn_query(tape.constant(topo.clone()), x, p, self.slope)?
            }
            BoundQuery::MemGnn(p) => {
                let edges = input
                    .edges
                    .as_ref()
                    .ok_or_else(|| Error::Data("MemGNN input without edge lists".into()))?;
                let att = AttentionEdges::new(input.features.rows(), edges)?;
                memgnn_query(x, &att, edges.feats.as_ref(), p, self.slope)?
            }
        };
        match &input.mask {
            Some(m) => q.mask_rows(Rc::from(m.as_slice())),
            None => Ok(q),
        }
    }

    pub fn forward(
        &self,
        tape: &'t Tape<T>,
        input: &GraphInput<T>,
        dropout: Option<Dropout<'_>>,
    ) -> Result<GraphForward<'t, T>> {
        let mut q = self.queries(tape, input)?;
        if let Some(d) = dropout.filter(|d| d.rate > 0.0) {
            let keep = 1.0 - d.rate;
            let scale = T::lit(1.0 / keep);
            let shape = q.shape();
            let mask: Vec<T> = (0..shape.iter().product::<usize>())
                .map(|_| if d.rng.gen::<f64>() < keep { scale } else { T::zero() })
                .collect();
            q = q.mul(tape.constant(Tensor::new(shape, mask)?))?;
        }
        let mask = input.mask.as_deref().map(Rc::from);
        let (repr, assignments) = stacked_forward(q, &self.layers, mask)?;
        let output = repr.matmul(self.head_w)?.add_row(self.head_b)?;
        Ok(GraphForward { output, assignments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            task: Task::Binary,
            d_in: 3,
            d_e: 0,
            n_max: 5,
            outputs: 2,
            hidden_dim: 4,
            key_schedule: vec![3, 1],
            heads: 2,
            temperature: 1.0,
            leaky_slope: 0.01,
            egat_layers: 1,
            edge_hidden: 2,
            shared_edge_dim: 2,
        }
    }

    #[test]
    fn param_orders_agree() {
        for kind in [ModelKind::Gmn, ModelKind::MemGnn] {
            let mut m = Model::<f64>::new(config(kind), 0).unwrap();
            let shapes: Vec<Vec<usize>> = m.named_params().iter().map(|(_, t, _)| t.shape().to_vec()).collect();
            let tape = Tape::new();
            let bound = m.bind(&tape);
            let var_shapes: Vec<Vec<usize>> = bound.vars().iter().map(|v| v.shape()).collect();
            assert_eq!(shapes, var_shapes);
            let mut_shapes: Vec<Vec<usize>> = m.params_mut().iter().map(|t| t.shape().to_vec()).collect();
            assert_eq!(shapes, mut_shapes);
        }
    }

    #[test]
    fn invalid_schedules() {
        for ks in [vec![], vec![4, 2], vec![2, 2, 1], vec![1, 4, 1]] {
            let mut c = config(ModelKind::Gmn);
            c.key_schedule = ks;
            assert!(matches!(Model::<f64>::new(c, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn dd_schedule_shapes() {
        let mut c = config(ModelKind::Gmn);
        c.key_schedule = vec![16, 8, 1];
        let m = Model::<f64>::new(c, 0).unwrap();
        let input = GraphInput {
            features: Tensor::ones(&[5, 3]),
            topo: Some(Tensor::ones(&[5, 5])),
            edges: None,
            mask: None,
        };
        let p = m.predict(&input).unwrap();
        let shapes: Vec<_> = p.assignments.iter().map(|a| a.values.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![5, 16], vec![16, 8], vec![8, 1]]);
        assert_eq!(p.output.shape(), &[1, 2]);
    }
}

//! The memory layer: soft clustering of node queries against learned keys.
//!
//! For input queries `Q` (`n × d`), each head `h` scores every query against
//! its keys with a Student's-t kernel, the heads are mixed by a `1×1`
//! convolution and a softmax over clusters gives the assignment `C`
//! (`n × n_out`). The coarsened queries are `σ(CᵀQ · W)`.

use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable state of one memory layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryLayerParams<T> {
    /// `heads × n_out × d_in`.
    pub keys: Tensor<T>,
    /// Per-head weight of the `1×1` convolution, `heads × 1`.
    pub head_mix: Tensor<T>,
    /// Shared bias of the `1×1` convolution, `1 × 1`.
    pub head_bias: Tensor<T>,
    /// `d_in × d_out`.
    pub proj: Tensor<T>,
    pub temperature: T,
}

impl<T: Scalar> MemoryLayerParams<T> {
    /// Keys ~ `U[−1/√d_in, 1/√d_in]`, Glorot-uniform projection, unit head
    /// weights and zero bias.
    pub fn init(rng: &mut Rng, heads: usize, n_out: usize, d_in: usize, d_out: usize, temperature: T) -> Result<Self> {
        if heads == 0 || n_out == 0 {
            return Err(Error::Config(format!(
                "memory layer needs at least one head and one key (got {heads} heads, {n_out} keys)"
            )));
        }
        if !(temperature > T::zero()) {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        let key_bound = 1.0 / (d_in as f64).sqrt();
        let keys = rng::uniform(rng, &[heads, n_out, d_in], key_bound);
        let proj_bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let proj = rng::uniform(rng, &[d_in, d_out], proj_bound);
        Ok(MemoryLayerParams {
            keys,
            head_mix: Tensor::ones(&[heads, 1]),
            head_bias: Tensor::zeros(&[1, 1]),
            proj,
            temperature,
        })
    }

    pub fn heads(&self) -> usize {
        self.keys.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.keys.shape()[1]
    }

    pub fn d_in(&self) -> usize {
        self.keys.shape()[2]
    }

    pub fn d_out(&self) -> usize {
        self.proj.cols()
    }

    /// Records all tensors as trainable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, slope: T) -> MemoryLayerVars<'t, T> {
        MemoryLayerVars {
            keys: tape.param(self.keys.clone()),
            head_mix: tape.param(self.head_mix.clone()),
            head_bias: tape.param(self.head_bias.clone()),
            proj: tape.param(self.proj.clone()),
            temperature: self.temperature,
            slope,
        }
    }
}

/// A memory layer's tensors recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct MemoryLayerVars<'t, T: Scalar> {
    pub keys: Var<'t, T>,
    pub head_mix: Var<'t, T>,
    pub head_bias: Var<'t, T>,
    pub proj: Var<'t, T>,
    pub temperature: T,
    pub slope: T,
}

impl<'t, T: Scalar> MemoryLayerVars<'t, T> {
    pub fn vars(&self) -> [Var<'t, T>; 4] {
        [self.keys, self.head_mix, self.head_bias, self.proj]
    }
}

/// Per-layer soft assignment of input nodes to clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix<T> {
    pub values: Tensor<T>,
    pub layer_index: usize,
}

impl<T: Scalar> AssignmentMatrix<T> {
    /// Most likely cluster of each row.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.values.rows())
            .map(|i| {
                let row = self.values.row(i);
                (0..row.len())
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(b.cmp(&a)))
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Student's-t kernel similarities, normalized over keys:
/// `C[i,j] ∝ (1 + ‖q_i − k_j‖²/τ)^(−(τ+1)/2)`.
pub fn student_t_assignment<'t, T: Scalar>(
    queries: Var<'t, T>,
    keys: Var<'t, T>,
    temperature: T,
) -> Result<Var<'t, T>> {
    let exponent = -(temperature + T::one()) / T::lit(2.0);
    Ok(queries
        .pairwise_sq_dist(keys)?
        .scale(T::one() / temperature)
        .add_scalar(T::one())
        .powf(exponent)
        .row_normalize())
}

/// Mixes per-head assignments with a `1×1` convolution (per-head weight
/// plus shared bias) and renormalizes each row with a softmax over clusters.
/// Rows with a `false` mask entry come out exactly zero.
pub fn aggregate_heads<'t, T: Scalar>(
    heads: &[Var<'t, T>],
    head_mix: Var<'t, T>,
    head_bias: Var<'t, T>,
    mask: Option<Rc<[bool]>>,
) -> Result<Var<'t, T>> {
    let first = *heads
        .first()
        .ok_or_else(|| Error::Contract("aggregate_heads needs at least one head".into()))?;
    if head_mix.shape() != [heads.len(), 1] {
        return Err(Error::shape("aggregate_heads", &head_mix.shape(), &[heads.len(), 1]));
    }
    let tape = first.tape();
    let mut mixed = first.scale_by(head_mix.slice_rows(0, 1)?)?;
    for (h, c) in heads.iter().enumerate().skip(1) {
        mixed = mixed.add(c.scale_by(head_mix.slice_rows(h, h + 1)?)?)?;
    }
    let bias = tape.constant(Tensor::ones(&first.shape())).scale_by(head_bias)?;
    let c = mixed.add(bias)?.row_softmax();
    match mask {
        Some(m) => c.mask_rows(m),
        None => Ok(c),
    }
}

/// `V = CᵀQ`.
pub fn pool_values<'t, T: Scalar>(assignment: Var<'t, T>, queries: Var<'t, T>) -> Result<Var<'t, T>> {
    assignment.transpose().matmul(queries)
}

/// `σ(V W)` with LeakyReLU `σ`.
pub fn project_queries<'t, T: Scalar>(values: Var<'t, T>, proj: Var<'t, T>, slope: T) -> Result<Var<'t, T>> {
    Ok(values.matmul(proj)?.leaky_relu(slope))
}

/// One memory layer: returns the coarsened queries and the assignment.
pub fn memory_layer_forward<'t, T: Scalar>(
    queries: Var<'t, T>,
    layer: &MemoryLayerVars<'t, T>,
    mask: Option<Rc<[bool]>>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let heads = layer.keys.shape()[0];
    let per_head = (0..heads)
        .map(|h| student_t_assignment(queries, layer.keys.select(h)?, layer.temperature))
        .collect::<Result<Vec<_>>>()?;
    let c = aggregate_heads(&per_head, layer.head_mix, layer.head_bias, mask)?;
    let v = pool_values(c, queries)?;
    let next = project_queries(v, layer.proj, layer.slope)?;
    Ok((next, c))
}

/// Applies the layers in order until the graph is a single node. The mask
/// applies to the input of the first layer only.
pub fn stacked_forward<'t, T: Scalar>(
    queries: Var<'t, T>,
    layers: &[MemoryLayerVars<'t, T>],
    mask: Option<Rc<[bool]>>,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    match layers.last() {
        None => return Err(Error::Config("at least one memory layer is required".into())),
        Some(last) if last.keys.shape()[1] != 1 => {
            return Err(Error::Config(format!(
                "last memory layer must have a single key, got {}",
                last.keys.shape()[1]
            )))
        }
        _ => {}
    }
    let mut q = queries;
    let mut assignments = Vec::with_capacity(layers.len());
    let mut mask = mask;
    for layer in layers {
        let (next, c) = memory_layer_forward(q, layer, mask.take())?;
        q = next;
        assignments.push(c);
    }
    Ok((q, assignments))
}

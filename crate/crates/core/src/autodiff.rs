//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation performed through a [`Var`] handle.
//! [`Tape::backward`] walks the record once in reverse construction order
//! and accumulates gradients for every node that depends on a parameter.
//! Tapes are built fresh for every forward pass and are not `Sync`.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    ScaleByVar { x: usize, s: usize },
    AddRow { x: usize, bias: usize },
    ScaleRows { x: usize, w: usize },
    LeakyRelu(usize, T),
    Powf(usize, T),
    Sqrt(usize),
    LnFloor(usize, T),
    RowSoftmax(usize),
    RowNormalize(usize),
    PairwiseSqDist(usize, usize),
    ConcatCols(usize, usize),
    SliceRows { x: usize, start: usize },
    Select { x: usize, index: usize },
    GatherRows { x: usize, index: Rc<[usize]> },
    SegmentSoftmax { x: usize, segment: Rc<[usize]> },
    SegmentSum { x: usize, segment: Rc<[usize]> },
    MaskRows { x: usize, mask: Rc<[bool]> },
    Sum(usize),
}

/// Names of the differentiable operations, as used by the gradient suite.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "scale_by",
    "add_row",
    "scale_rows",
    "leaky_relu",
    "powf",
    "sqrt",
    "ln_floor",
    "row_softmax",
    "row_normalize",
    "pairwise_sq_dist",
    "concat_cols",
    "slice_rows",
    "select",
    "gather_rows",
    "segment_softmax",
    "segment_sum",
    "mask_rows",
    "sum",
];

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleByVar { .. } => "scale_by",
            Op::AddRow { .. } => "add_row",
            Op::ScaleRows { .. } => "scale_rows",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Powf(..) => "powf",
            Op::Sqrt(..) => "sqrt",
            Op::LnFloor(..) => "ln_floor",
            Op::RowSoftmax(..) => "row_softmax",
            Op::RowNormalize(..) => "row_normalize",
            Op::PairwiseSqDist(..) => "pairwise_sq_dist",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Select { .. } => "select",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::SegmentSum { .. } => "segment_sum",
            Op::MaskRows { .. } => "mask_rows",
            Op::Sum(..) => "sum",
        }
    }
}

thread_local! {
    static CORRUPTED: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Fault injection for negative-control tests: while set, the backward
/// rule of the named op returns 1.5× its true contribution on this thread.
/// Returns `false` for an unknown op name.
#[doc(hidden)]
pub fn corrupt_backward_rule(name: Option<&str>) -> bool {
    let found = match name {
        None => None,
        Some(n) => match OP_NAMES.iter().find(|&&o| o == n) {
            Some(&o) => Some(o),
            None => return false,
        },
    };
    CORRUPTED.with(|c| c.set(found));
    true
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation record for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Accumulated gradients, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the backward root w.r.t. `var`; `None` when `var` does
    /// not influence the root or was recorded as a constant.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but returns zeros when no gradient reached `var`.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), Op::Leaf, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Rc<Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        let corrupted = CORRUPTED.with(Cell::get);
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(root_value.shape(), T::one()));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            // leaves keep their accumulated gradient
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let out = &node.value;
            let val = |i: usize| &nodes[i].value;
            let fault = corrupted == Some(node.op.name());
            let mut send = |i: usize, contrib: Tensor<T>| {
                if !nodes[i].needs_grad {
                    return;
                }
                let contrib = if fault { contrib.map(|v| v * T::lit(1.5)) } else { contrib };
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&contrib).expect("gradient shape"),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let wants = |i: usize| nodes[i].needs_grad;

            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        send(*a, g.matmul_t(val(*b))?);
                    }
                    if wants(*b) {
                        send(*b, val(*a).t_matmul(&g)?);
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::Add(a, b) => {
                    if wants(*a) {
                        send(*a, g.clone());
                    }
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        send(*a, g.clone());
                    }
                    send(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        send(*a, g.zip_map(val(*b), |x, y| x * y)?);
                    }
                    if wants(*b) {
                        send(*b, g.zip_map(val(*a), |x, y| x * y)?);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => send(*a, g.clone()),
                Op::ScaleByVar { x, s } => {
                    let sv = val(*s).data()[0];
                    if wants(*x) {
                        send(*x, g.map(|v| v * sv));
                    }
                    if wants(*s) {
                        let gs: T = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a * b).sum();
                        send(*s, Tensor::scalar(gs));
                    }
                }
                Op::AddRow { x, bias } => {
                    if wants(*x) {
                        send(*x, g.clone());
                    }
                    if wants(*bias) {
                        let n = g.cols();
                        let mut gb = Tensor::zeros(&[1, n]);
                        for i in 0..g.rows() {
                            for (acc, &v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                                *acc = *acc + v;
                            }
                        }
                        send(*bias, gb);
                    }
                }
                Op::ScaleRows { x, w } => {
                    let xv = val(*x);
                    let wv = val(*w);
                    if wants(*x) {
                        let mut gx = g.clone();
                        for i in 0..gx.rows() {
                            let wi = wv.data()[i];
                            gx.row_mut(i).iter_mut().for_each(|v| *v = *v * wi);
                        }
                        send(*x, gx);
                    }
                    if wants(*w) {
                        let data = (0..g.rows())
                            .map(|i| g.row(i).iter().zip(xv.row(i)).map(|(&a, &b)| a * b).sum())
                            .collect();
                        send(*w, Tensor::matrix(g.rows(), 1, data)?);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    send(
                        *a,
                        g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { gv * slope })?,
                    );
                }
                Op::Powf(a, p) => {
                    let p = *p;
                    send(*a, g.zip_map(val(*a), |gv, x| gv * p * x.powf(p - T::one()))?);
                }
                Op::Sqrt(a) => {
                    let half = T::lit(0.5);
                    send(
                        *a,
                        g.zip_map(out, |gv, y| if y > T::zero() { gv * half / y } else { T::zero() })?,
                    );
                }
                Op::LnFloor(a, floor) => {
                    let floor = *floor;
                    send(
                        *a,
                        g.zip_map(val(*a), |gv, x| if x > floor { gv / x } else { T::zero() })?,
                    );
                }
                Op::RowSoftmax(a) => {
                    let mut gx = g.clone();
                    for i in 0..out.rows() {
                        let y = out.row(i);
                        let dot: T = g.row(i).iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for (gxv, (&gv, &yv)) in gx.row_mut(i).iter_mut().zip(g.row(i).iter().zip(y)) {
                            *gxv = yv * (gv - dot);
                        }
                    }
                    send(*a, gx);
                }
                Op::RowNormalize(a) => {
                    let xv = val(*a);
                    let mut gx = g.clone();
                    for i in 0..out.rows() {
                        let s: T = xv.row(i).iter().copied().sum();
                        let y = out.row(i);
                        let dot: T = g.row(i).iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for (gxv, &gv) in gx.row_mut(i).iter_mut().zip(g.row(i)) {
                            *gxv = (gv - dot) / s;
                        }
                    }
                    send(*a, gx);
                }
                Op::PairwiseSqDist(q, k) => {
                    let qv = val(*q);
                    let kv = val(*k);
                    let two = T::lit(2.0);
                    if wants(*q) {
                        // 2 (rowsum(g)_i q_i − (g K)_i)
                        let gk = g.matmul(kv)?;
                        let mut gq = qv.as_ref().clone();
                        for i in 0..gq.rows() {
                            let rs: T = g.row(i).iter().copied().sum();
                            for (v, &m) in gq.row_mut(i).iter_mut().zip(gk.row(i)) {
                                *v = two * (rs * *v - m);
                            }
                        }
                        send(*q, gq);
                    }
                    if wants(*k) {
                        let gtq = g.t_matmul(qv)?;
                        let mut gkk = kv.as_ref().clone();
                        for j in 0..gkk.rows() {
                            let cs: T = (0..g.rows()).map(|i| g.get(i, j)).sum();
                            for (v, &m) in gkk.row_mut(j).iter_mut().zip(gtq.row(j)) {
                                *v = two * (cs * *v - m);
                            }
                        }
                        send(*k, gkk);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    let rows = g.rows();
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for i in 0..rows {
                        let r = g.row(i);
                        ga.extend_from_slice(&r[..ca]);
                        gb.extend_from_slice(&r[ca..]);
                    }
                    if wants(*a) {
                        send(*a, Tensor::matrix(rows, ca, ga)?);
                    }
                    send(*b, Tensor::matrix(rows, cb, gb)?);
                }
                Op::SliceRows { x, start } => {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    let c = gx.cols();
                    gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    send(*x, gx);
                }
                Op::Select { x, index } => {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    let block = g.len();
                    gx.data_mut()[index * block..(index + 1) * block].copy_from_slice(g.data());
                    send(*x, gx);
                }
                Op::GatherRows { x, index } => {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    for (e, &src) in index.iter().enumerate() {
                        for (acc, &v) in gx.row_mut(src).iter_mut().zip(g.row(e)) {
                            *acc = *acc + v;
                        }
                    }
                    send(*x, gx);
                }
                Op::SegmentSoftmax { x, segment } => {
                    let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dots = vec![T::zero(); n_seg];
                    for (e, &s) in segment.iter().enumerate() {
                        dots[s] = dots[s] + g.data()[e] * out.data()[e];
                    }
                    let mut gx = g.clone();
                    for (e, &s) in segment.iter().enumerate() {
                        gx.data_mut()[e] = out.data()[e] * (g.data()[e] - dots[s]);
                    }
                    send(*x, gx);
                }
                Op::SegmentSum { x, segment } => {
                    let xv = val(*x);
                    let mut gx = Tensor::zeros(xv.shape());
                    for (e, &s) in segment.iter().enumerate() {
                        gx.row_mut(e).copy_from_slice(g.row(s));
                    }
                    send(*x, gx);
                }
                Op::MaskRows { x, mask } => {
                    let mut gx = g.clone();
                    for (i, &keep) in mask.iter().enumerate() {
                        if !keep {
                            gx.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
                        }
                    }
                    send(*x, gx);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    send(*a, Tensor::full(val(*a).shape(), gv));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a `1×1` variable.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn unary(self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.tape.needs(self.id);
        self.tape.push(Rc::new(value), op, needs)
    }

    fn binary(self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(Rc::new(value), op, needs)
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Var<'t, T> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    /// Multiplies every entry by the single entry of `s`.
    pub fn scale_by(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let sv = s.value();
        if sv.len() != 1 {
            return Err(Error::shape("scale_by", sv.shape(), &[1, 1]));
        }
        let c = sv.data()[0];
        let v = self.value().map(|x| x * c);
        Ok(self.binary(s, v, Op::ScaleByVar { x: self.id, s: s.id }))
    }

    /// Adds a `1×n` row vector to every row.
    pub fn add_row(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let b = bias.value();
        if b.shape() != [1, x.cols()] {
            return Err(Error::shape("add_row", x.shape(), b.shape()));
        }
        let mut v = x.as_ref().clone();
        for i in 0..v.rows() {
            for (o, &bv) in v.row_mut(i).iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        Ok(self.binary(bias, v, Op::AddRow { x: self.id, bias: bias.id }))
    }

    /// Multiplies row `i` by `w[i]`, with `w` an `m×1` column.
    pub fn scale_rows(self, w: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let wv = w.value();
        if wv.shape() != [x.rows(), 1] {
            return Err(Error::shape("scale_rows", x.shape(), wv.shape()));
        }
        let mut v = x.as_ref().clone();
        for i in 0..v.rows() {
            let wi = wv.data()[i];
            v.row_mut(i).iter_mut().for_each(|o| *o = *o * wi);
        }
        Ok(self.binary(w, v, Op::ScaleRows { x: self.id, w: w.id }))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        let v = self.value().map(|x| if x > T::zero() { x } else { x * slope });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    /// Elementwise power. Inputs must be positive when `p` is not an integer.
    pub fn powf(self, p: T) -> Var<'t, T> {
        let v = self.value().map(|x| x.powf(p));
        self.unary(v, Op::Powf(self.id, p))
    }

    /// Elementwise square root; the gradient at zero is taken as zero.
    pub fn sqrt(self) -> Var<'t, T> {
        let v = self.value().map(|x| x.sqrt());
        self.unary(v, Op::Sqrt(self.id))
    }

    /// `ln(max(x, floor))`.
    pub fn ln_floor(self, floor: T) -> Var<'t, T> {
        let v = self.value().map(|x| if x.is_nan() { x } else { x.max(floor).ln() });
        self.unary(v, Op::LnFloor(self.id, floor))
    }

    pub fn row_softmax(self) -> Var<'t, T> {
        let v = self.value().row_softmax();
        self.unary(v, Op::RowSoftmax(self.id))
    }

    /// Divides each row by its sum. Rows must have nonzero sums.
    pub fn row_normalize(self) -> Var<'t, T> {
        let mut v = self.value().as_ref().clone();
        for i in 0..v.rows() {
            let s: T = v.row(i).iter().copied().sum();
            v.row_mut(i).iter_mut().for_each(|x| *x = *x / s);
        }
        self.unary(v, Op::RowNormalize(self.id))
    }

    pub fn pairwise_sq_dist(self, keys: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value().pairwise_sq_dist(&keys.value())?;
        Ok(self.binary(keys, v, Op::PairwiseSqDist(self.id, keys.id)))
    }

    /// Horizontal concatenation `[self ‖ other]`.
    pub fn concat_cols(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        if a.rows() != b.rows() {
            return Err(Error::shape("concat_cols", a.shape(), b.shape()));
        }
        let rows = a.rows();
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..rows {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        let v = Tensor::matrix(rows, a.cols() + b.cols(), data)?;
        Ok(self.binary(other, v, Op::ConcatCols(self.id, other.id)))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if start > end || end > x.rows() {
            return Err(Error::Contract(format!(
                "slice_rows {start}..{end} out of range for {} rows",
                x.rows()
            )));
        }
        let v = x.slice_rows(start, end);
        Ok(self.unary(v, Op::SliceRows { x: self.id, start }))
    }

    /// Picks matrix `index` out of a rank-3 tensor.
    pub fn select(self, index: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        if shape.len() != 3 || index >= shape[0] {
            return Err(Error::Contract(format!(
                "select {index} on tensor of shape {shape:?}"
            )));
        }
        let block = shape[1] * shape[2];
        let v = Tensor::matrix(
            shape[1],
            shape[2],
            x.data()[index * block..(index + 1) * block].to_vec(),
        )?;
        Ok(self.unary(v, Op::Select { x: self.id, index }))
    }

    /// Row `e` of the output is row `index[e]` of the input.
    pub fn gather_rows(self, index: Rc<[usize]>) -> Result<Var<'t, T>> {
        let x = self.value();
        let mut data = Vec::with_capacity(index.len() * x.cols());
        for &i in index.iter() {
            if i >= x.rows() {
                return Err(Error::Contract(format!("gather index {i} out of range")));
            }
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::matrix(index.len(), x.cols(), data)?;
        Ok(self.unary(v, Op::GatherRows { x: self.id, index }))
    }

    /// Softmax of an `m×1` column within groups sharing `segment[e]`.
    pub fn segment_softmax(self, segment: Rc<[usize]>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.shape() != [segment.len(), 1] {
            return Err(Error::shape("segment_softmax", x.shape(), &[segment.len(), 1]));
        }
        let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![T::neg_infinity(); n_seg];
        for (e, &s) in segment.iter().enumerate() {
            max[s] = max[s].max(x.data()[e]);
        }
        let mut total = vec![T::zero(); n_seg];
        let mut v = x.as_ref().clone();
        for (e, &s) in segment.iter().enumerate() {
            let ex = (x.data()[e] - max[s]).exp();
            v.data_mut()[e] = ex;
            total[s] = total[s] + ex;
        }
        for (e, &s) in segment.iter().enumerate() {
            v.data_mut()[e] = v.data()[e] / total[s];
        }
        Ok(self.unary(v, Op::SegmentSoftmax { x: self.id, segment }))
    }

    /// Row `s` of the `n×d` output sums input rows `e` with `segment[e] == s`.
    pub fn segment_sum(self, segment: Rc<[usize]>, n: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rows() != segment.len() {
            return Err(Error::shape("segment_sum", x.shape(), &[segment.len()]));
        }
        let mut v = Tensor::zeros(&[n, x.cols()]);
        for (e, &s) in segment.iter().enumerate() {
            if s >= n {
                return Err(Error::Contract(format!("segment {s} out of range {n}")));
            }
            for (acc, &xv) in v.row_mut(s).iter_mut().zip(x.row(e)) {
                *acc = *acc + xv;
            }
        }
        Ok(self.unary(v, Op::SegmentSum { x: self.id, segment }))
    }

    /// Zeroes rows whose mask entry is `false`.
    pub fn mask_rows(self, mask: Rc<[bool]>) -> Result<Var<'t, T>> {
        let mut v = self.value().as_ref().clone();
        if mask.len() != v.rows() {
            return Err(Error::shape("mask_rows", v.shape(), &[mask.len()]));
        }
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                v.row_mut(i).iter_mut().for_each(|x| *x = T::zero());
            }
        }
        Ok(self.unary(v, Op::MaskRows { x: self.id, mask }))
    }

    /// Sum of all entries as a `1×1` variable.
    pub fn sum(self) -> Var<'t, T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().len().max(1);
        self.sum().scale(T::one() / T::from_usize(n).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_rows(&[&[1.0, -2.0, 3.0]]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_rows(&[&[1.0, 2.0]]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let x = tape.param(Tensor::from_rows(&[&[3.0, 4.0]]));
        let g = tape.backward(c.mul(x).unwrap().sum()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_rows(&[&[1.0, 2.0]]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn leaky_relu_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_rows(&[&[2.0, -1.0, 0.0]]));
        let y = x.leaky_relu(0.01).value();
        assert_eq!(y.data(), &[2.0, -0.01, 0.0]);
    }

    #[test]
    fn reused_var_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.add(x).unwrap().add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn segment_ops_forward() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_rows(&[&[3f64.ln()], &[0.0], &[5.0]]));
        let seg: Rc<[usize]> = Rc::from(vec![0, 0, 1]);
        let a = x.segment_softmax(seg.clone()).unwrap().value();
        assert!((a.data()[0] - 0.75).abs() < 1e-15);
        assert!((a.data()[1] - 0.25).abs() < 1e-15);
        assert_eq!(a.data()[2], 1.0);
        let s = x.segment_sum(seg, 2).unwrap().value();
        assert!((s.data()[0] - 3f64.ln()).abs() < 1e-15);
        assert_eq!(s.data()[1], 5.0);
    }
}

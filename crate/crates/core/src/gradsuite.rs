//! Finite-difference checks of every differentiable operation and of the
//! full model losses on tiny random instances.

use std::rc::Rc;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::dataset::{Graph, Target, Task};
use crate::diffusion::DiffusionConfig;
use crate::error::Result;
use crate::gradcheck::{grad_check_many, relative_error, DEFAULT_EPS};
use crate::loss::{clustering_loss, supervised_loss, target_distribution, total_loss};
use crate::memory::{aggregate_heads, memory_layer_forward, student_t_assignment, MemoryLayerVars};
use crate::model::{GraphInput, Model, ModelConfig, ModelKind};
use crate::query::{egat_attention, egat_layer, gmn_query, AttentionEdges, EgatLayerVars, GmnQueryVars};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Largest acceptable relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn rand(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    rng::uniform(rng, shape, 1.0)
}

/// Entries bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    rand(rng, shape).map(|v| v + 0.2 * v.signum())
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    rand(rng, shape).map(|v| v.abs() + 0.5)
}

/// Contracts `out` with a fixed random weight so every entry matters.
fn weighted<'t>(out: Var<'t, f64>, w: &Tensor<f64>) -> Result<Var<'t, f64>> {
    Ok(out.mul(out.tape().constant(w.clone()))?.sum())
}

type OpFn = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

fn op_checks(rng: &mut Rng) -> Vec<(&'static str, OpFn, Vec<Tensor<f64>>)> {
    let mut v: Vec<(&'static str, OpFn, Vec<Tensor<f64>>)> = Vec::new();
    macro_rules! check {
        ($name:expr, $inputs:expr, $out_shape:expr, |$x:ident| $body:expr) => {{
            let w = rand(rng, &$out_shape);
            let f: OpFn = Box::new(move |_tape, $x| weighted($body?, &w));
            v.push(($name, f, $inputs));
        }};
    }
    check!("matmul", vec![rand(rng, &[4, 3]), rand(rng, &[3, 5])], [4, 5], |x| x[0].matmul(x[1]));
    check!("transpose", vec![rand(rng, &[3, 4])], [4, 3], |x| Ok::<_, crate::Error>(x[0].transpose()));
    check!("add", vec![rand(rng, &[3, 4]), rand(rng, &[3, 4])], [3, 4], |x| x[0].add(x[1]));
    check!("sub", vec![rand(rng, &[3, 4]), rand(rng, &[3, 4])], [3, 4], |x| x[0].sub(x[1]));
    check!("mul", vec![rand(rng, &[3, 4]), rand(rng, &[3, 4])], [3, 4], |x| x[0].mul(x[1]));
    check!("scale", vec![rand(rng, &[3, 4])], [3, 4], |x| Ok::<_, crate::Error>(x[0].scale(0.7)));
    check!("add_scalar", vec![rand(rng, &[3, 4])], [3, 4], |x| Ok::<_, crate::Error>(x[0].add_scalar(0.3)));
    check!("scale_by", vec![rand(rng, &[3, 4]), rand(rng, &[1, 1])], [3, 4], |x| x[0].scale_by(x[1]));
    check!("add_row", vec![rand(rng, &[3, 4]), rand(rng, &[1, 4])], [3, 4], |x| x[0].add_row(x[1]));
    check!("scale_rows", vec![rand(rng, &[3, 4]), rand(rng, &[3, 1])], [3, 4], |x| x[0].scale_rows(x[1]));
    check!("leaky_relu", vec![away_from_zero(rng, &[4, 5])], [4, 5], |x| Ok::<_, crate::Error>(
        x[0].leaky_relu(0.01)
    ));
    check!("powf", vec![positive(rng, &[3, 4])], [3, 4], |x| Ok::<_, crate::Error>(x[0].powf(-1.5)));
    check!("sqrt", vec![positive(rng, &[3, 4])], [3, 4], |x| Ok::<_, crate::Error>(x[0].sqrt()));
    check!("ln_floor", vec![positive(rng, &[3, 4])], [3, 4], |x| Ok::<_, crate::Error>(
        x[0].ln_floor(1e-12)
    ));
    check!("row_softmax", vec![rand(rng, &[4, 5])], [4, 5], |x| Ok::<_, crate::Error>(x[0].row_softmax()));
    check!("row_normalize", vec![positive(rng, &[4, 5])], [4, 5], |x| Ok::<_, crate::Error>(
        x[0].row_normalize()
    ));
    check!("pairwise_sq_dist", vec![rand(rng, &[4, 3]), rand(rng, &[5, 3])], [4, 5], |x| x[0]
        .pairwise_sq_dist(x[1]));
    check!("concat_cols", vec![rand(rng, &[3, 2]), rand(rng, &[3, 4])], [3, 6], |x| x[0].concat_cols(x[1]));
    check!("slice_rows", vec![rand(rng, &[5, 3])], [3, 3], |x| x[0].slice_rows(1, 4));
    let cube = Tensor::new(vec![2, 3, 4], rand(rng, &[24, 1]).into_data()).expect("shape");
    check!("select", vec![cube], [3, 4], |x| x[0].select(1));
    let index: Rc<[usize]> = Rc::from(vec![0, 2, 2, 3, 1]);
    {
        let index = index.clone();
        check!("gather_rows", vec![rand(rng, &[4, 3])], [5, 3], |x| x[0].gather_rows(index.clone()));
    }
    let segment: Rc<[usize]> = Rc::from(vec![0, 0, 1, 1, 1, 2]);
    {
        let segment = segment.clone();
        check!("segment_softmax", vec![rand(rng, &[6, 1])], [6, 1], |x| x[0].segment_softmax(segment.clone()));
    }
    {
        let segment = segment.clone();
        check!("segment_sum", vec![rand(rng, &[6, 3])], [3, 3], |x| x[0].segment_sum(segment.clone(), 3));
    }
    let mask: Rc<[bool]> = Rc::from(vec![true, false, true, true]);
    check!("mask_rows", vec![rand(rng, &[4, 3])], [4, 3], |x| x[0].mask_rows(mask.clone()));
    check!("sum", vec![rand(rng, &[3, 4])], [1, 1], |x| Ok::<_, crate::Error>(x[0].sum()));
    v
}

fn layer_of<'t>(x: &[Var<'t, f64>]) -> Result<(Var<'t, f64>, Var<'t, f64>)> {
    let layer = MemoryLayerVars {
        keys: x[1],
        head_mix: x[2],
        head_bias: x[3],
        proj: x[4],
        temperature: 1.0,
        slope: 0.01,
    };
    memory_layer_forward(x[0], &layer, None)
}

fn layer_checks(rng: &mut Rng) -> Vec<(&'static str, OpFn, Vec<Tensor<f64>>)> {
    let mut v: Vec<(&'static str, OpFn, Vec<Tensor<f64>>)> = Vec::new();

    let w = rand(rng, &[5, 3]);
    let f: OpFn = Box::new(move |_, x| weighted(student_t_assignment(x[0], x[1], 1.0)?, &w));
    v.push(("student_t_assignment", f, vec![rand(rng, &[5, 4]), rand(rng, &[3, 4])]));

    let w = rand(rng, &[5, 3]);
    let f: OpFn = Box::new(move |_, x| {
        let mask: Rc<[bool]> = Rc::from(vec![true, true, false, true, true]);
        weighted(aggregate_heads(&[x[0], x[1]], x[2], x[3], Some(mask))?, &w)
    });
    v.push((
        "aggregate_heads",
        f,
        vec![positive(rng, &[5, 3]), positive(rng, &[5, 3]), rand(rng, &[2, 1]), rand(rng, &[1, 1])],
    ));

    let keys = Tensor::new(vec![2, 3, 4], rand(rng, &[24, 1]).into_data()).expect("shape");
    let inputs = vec![rand(rng, &[5, 4]), keys, rand(rng, &[2, 1]), rand(rng, &[1, 1]), rand(rng, &[4, 4])];
    // the target distribution is a constant, taken at the unperturbed point
    let p = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let (_, c) = layer_of(&vars).expect("memory layer");
        target_distribution(&c.value())
    };
    let w = rand(rng, &[3, 4]);
    let f: OpFn = Box::new(move |_, x| {
        let (next, c) = layer_of(x)?;
        weighted(next, &w)?.add(clustering_loss(c, &p)?)
    });
    v.push(("memory_layer", f, inputs));

    let w = rand(rng, &[4, 5]);
    let f: OpFn = Box::new(move |_, x| {
        let params = GmnQueryVars { w0: x[2], w1: x[3] };
        weighted(gmn_query(x[0], x[1], &params, 0.01)?, &w)
    });
    v.push((
        "gmn_query",
        f,
        vec![positive(rng, &[4, 6]), rand(rng, &[4, 3]), rand(rng, &[6, 3]), rand(rng, &[6, 5])],
    ));

    let edges = {
        let src = vec![0, 1, 1, 2, 2, 3, 0, 3];
        let dst = vec![1, 0, 2, 1, 3, 2, 3, 0];
        let ge = crate::dataset::GraphEdges::<f64> { src, dst, feats: None };
        AttentionEdges::new(4, &ge).expect("valid edges")
    };
    let m = edges.len();
    for (name, layer) in [("egat_attention", false), ("egat_layer", true)] {
        let edges = edges.clone();
        let w = if layer { rand(rng, &[4, 3]) } else { rand(rng, &[m, 1]) };
        let f: OpFn = Box::new(move |_, x| {
            let params = EgatLayerVars {
                w_node: x[2],
                w_edge: x[3],
                attn: x[4],
            };
            let out = if layer {
                egat_layer(x[0], &edges, x[1], &params, 0.01)?
            } else {
                egat_attention(x[0], &edges, x[1], &params, 0.01)?
            };
            weighted(out, &w)
        });
        v.push((
            name,
            f,
            vec![
                rand(rng, &[4, 3]),
                rand(rng, &[m, 2]),
                rand(rng, &[3, 3]),
                rand(rng, &[2, 2]),
                rand(rng, &[8, 1]),
            ],
        ));
    }

    let f: OpFn = Box::new(move |_, x| {
        let p = Tensor::from_rows(&[&[0.7, 0.2, 0.1], &[0.1, 0.3, 0.6]]);
        clustering_loss(x[0].row_softmax(), &p)
    });
    v.push(("clustering_loss", f, vec![rand(rng, &[2, 3])]));

    let f: OpFn = Box::new(move |_, x| {
        let outs = [x[0].slice_rows(0, 1)?, x[0].slice_rows(1, 2)?];
        supervised_loss(&outs, &[Target::Class(2), Target::Class(0)], Task::Multiclass)
    });
    v.push(("cross_entropy", f, vec![rand(rng, &[2, 3])]));

    let f: OpFn = Box::new(move |_, x| {
        let outs = [x[0].slice_rows(0, 1)?, x[0].slice_rows(1, 2)?];
        supervised_loss(&outs, &[Target::Value(0.3), Target::Value(-1.2)], Task::Regression)
    });
    v.push(("rmse", f, vec![rand(rng, &[2, 1])]));
    v
}

fn random_graph(rng: &mut Rng, d_in: usize, d_e: usize, target: Target) -> Graph {
    let n = rng.gen_range(3..=6);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    let x = rand(rng, &[n, d_in]);
    let e = (d_e > 0).then(|| rand(rng, &[edges.len(), d_e]));
    Graph::new(n, edges, x, e, target).expect("valid random graph")
}

/// Loss of a two-graph batch with `λ = 0.5`; target distributions are
/// taken from `fixed` when given so they stay constant under perturbation.
fn model_loss<'t>(
    model: &Model<f64>,
    tape: &'t Tape<f64>,
    inputs: &[GraphInput<f64>],
    targets: &[Target],
    fixed: Option<&[Vec<Tensor<f64>>]>,
) -> Result<(Var<'t, f64>, Vec<Var<'t, f64>>, Vec<Vec<Tensor<f64>>>)> {
    let bound = model.bind(tape);
    let mut outputs = Vec::new();
    let mut kls = Vec::new();
    let mut targets_p = Vec::new();
    for (g, input) in inputs.iter().enumerate() {
        let fwd = bound.forward(tape, input, None)?;
        outputs.push(fwd.output);
        let ps: Vec<Tensor<f64>> = match fixed {
            Some(f) => f[g].clone(),
            None => fwd.assignments.iter().map(|c| target_distribution(&c.value())).collect(),
        };
        let mut kl = clustering_loss(fwd.assignments[0], &ps[0])?;
        for (c, p) in fwd.assignments.iter().zip(&ps).skip(1) {
            kl = kl.add(clustering_loss(*c, p)?)?;
        }
        kls.push(kl);
        targets_p.push(ps);
    }
    let sup = supervised_loss(&outputs, targets, model.config.task)?;
    let loss = total_loss(Some(sup), &kls, 0.5)?;
    Ok((loss, bound.vars(), targets_p))
}

/// Checks the gradient of the full batch loss w.r.t. every model parameter.
pub fn check_model(model: &Model<f64>, inputs: &[GraphInput<f64>], targets: &[Target]) -> Result<f64> {
    let tape = Tape::new();
    let (loss, vars, fixed) = model_loss(model, &tape, inputs, targets, None)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |m: &Model<f64>| -> Result<f64> {
        let tape = Tape::new();
        Ok(model_loss(m, &tape, inputs, targets, Some(&fixed))?.0.item())
    };
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (p, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe.params_mut()[p].data()[j];
            probe.params_mut()[p].data_mut()[j] = orig + DEFAULT_EPS;
            let up = eval(&probe)?;
            probe.params_mut()[p].data_mut()[j] = orig - DEFAULT_EPS;
            let down = eval(&probe)?;
            probe.params_mut()[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * DEFAULT_EPS);
            let e = relative_error(grad.data()[j], numeric);
            // NaN must not be swallowed by max
            if e.is_nan() || e > worst {
                worst = e;
            }
        }
    }
    Ok(worst)
}

fn tiny_config(kind: ModelKind, task: Task, d_e: usize) -> ModelConfig {
    ModelConfig {
        kind,
        task,
        d_in: 3,
        d_e,
        n_max: 6,
        outputs: if task == Task::Regression { 1 } else { 3 },
        hidden_dim: 4,
        key_schedule: vec![3, 1],
        heads: 2,
        temperature: 1.0,
        leaky_slope: 0.01,
        egat_layers: 2,
        edge_hidden: 2,
        shared_edge_dim: 2,
    }
}

fn model_checks(rng: &mut Rng) -> Result<Vec<CheckResult>> {
    let cases = [
        ("model_gmn", ModelKind::Gmn, Task::Multiclass, 0),
        ("model_memgnn_edge_features", ModelKind::MemGnn, Task::Multiclass, 2),
        ("model_memgnn_shared_edge", ModelKind::MemGnn, Task::Regression, 0),
    ];
    let diffusion = DiffusionConfig::default();
    let mut out = Vec::new();
    for (name, kind, task, d_e) in cases {
        let cfg = tiny_config(kind, task, d_e);
        let targets = if task == Task::Regression {
            vec![Target::Value(0.4), Target::Value(-0.8)]
        } else {
            vec![Target::Class(1), Target::Class(2)]
        };
        let graphs: Vec<Graph> = targets.iter().map(|&t| random_graph(rng, cfg.d_in, d_e, t)).collect();
        let inputs = graphs
            .iter()
            .map(|g| GraphInput::from_graph(g, kind, &diffusion, cfg.n_max, None))
            .collect::<Result<Vec<_>>>()?;
        let model = Model::new(cfg, rng.gen())?;
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: check_model(&model, &inputs, &targets)?,
        });
    }
    Ok(out)
}

/// Runs every check. Results come in a fixed order: primitive ops, layer
/// and loss functions, then full models.
pub fn run(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = rng::seeded(seed);
    let mut results = Vec::new();
    let mut checks = op_checks(&mut rng);
    checks.extend(layer_checks(&mut rng));
    for (name, f, inputs) in checks {
        let err = grad_check_many(|tape, vars| f(tape, vars), &inputs, DEFAULT_EPS)?;
        results.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
        });
    }
    results.extend(model_checks(&mut rng)?);
    Ok(results)
}

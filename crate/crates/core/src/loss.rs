//! Supervised and clustering losses.

use crate::autodiff::Var;
use crate::dataset::{Target, Task};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor used inside logarithms and for column sums.
pub const LOG_FLOOR: f64 = 1e-12;

/// Sharpened auxiliary distribution of a soft assignment `C`.
///
/// `P_ij = (C_ij² / f_j) / Σ_j' (C_ij'² / f_j')` with `f_j = Σ_i C_ij`.
/// Rows of `C` that are entirely zero (masked nodes) map to zero rows.
pub fn target_distribution<T: Scalar>(c: &Tensor<T>) -> Tensor<T> {
    let (n, m) = (c.rows(), c.cols());
    let floor = T::lit(LOG_FLOOR);
    let mut f = vec![T::zero(); m];
    for i in 0..n {
        for (fj, &v) in f.iter_mut().zip(c.row(i)) {
            *fj = *fj + v;
        }
    }
    let f: Vec<T> = f.into_iter().map(|v| v.max(floor)).collect();
    let mut p = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let row = p.row_mut(i);
        for ((dst, &v), &fj) in row.iter_mut().zip(c.row(i)).zip(&f) {
            *dst = v * v / fj;
        }
        let s: T = row.iter().copied().sum();
        if s > T::zero() {
            row.iter_mut().for_each(|v| *v = *v / s);
        }
    }
    p
}

/// `KL(P‖C) = Σ_ij P_ij (ln P_ij − ln C_ij)`; zero entries of `P` contribute nothing.
pub fn kl_divergence<T: Scalar>(p: &Tensor<T>, c: &Tensor<T>) -> Result<T> {
    if p.shape() != c.shape() {
        return Err(Error::shape("kl_divergence", p.shape(), c.shape()));
    }
    let floor = T::lit(LOG_FLOOR);
    Ok(p.data()
        .iter()
        .zip(c.data())
        .filter(|(&pv, _)| pv > T::zero())
        .map(|(&pv, &cv)| pv * (pv.ln() - if cv.is_nan() { cv } else { cv.max(floor) }.ln()))
        .sum())
}

/// Differentiable `KL(P‖C)`; `P` is a constant.
pub fn clustering_loss<'t, T: Scalar>(c: Var<'t, T>, p: &Tensor<T>) -> Result<Var<'t, T>> {
    let shape = c.shape();
    if shape != p.shape() {
        return Err(Error::shape("clustering_loss", &shape, p.shape()));
    }
    let floor = T::lit(LOG_FLOOR);
    let tape = c.tape();
    // Σ P ln P is a constant offset that keeps the value a true divergence.
    let entropy: T = p.data().iter().filter(|&&v| v > T::zero()).map(|&v| v * v.ln()).sum();
    let cross = c.ln_floor(floor).mul(tape.constant(p.clone()))?.sum();
    Ok(cross.scale(-T::one()).add_scalar(entropy))
}

/// `Σ_l KL(P_l‖C_l)` over a graph's layers, with each `P_l` computed from
/// the current assignment values and held fixed.
pub fn graph_clustering_loss<'t, T: Scalar>(assignments: &[Var<'t, T>]) -> Result<Option<Var<'t, T>>> {
    let mut total: Option<Var<'t, T>> = None;
    for &c in assignments {
        let p = target_distribution(&c.value());
        let kl = clustering_loss(c, &p)?;
        total = Some(match total {
            Some(t) => t.add(kl)?,
            None => kl,
        });
    }
    Ok(total)
}

/// Batch supervised loss. `outputs` holds one `1 × k` row per graph.
///
/// Classification: mean cross-entropy of the softmaxed logits.
/// Regression: root of the mean squared error over the batch.
pub fn supervised_loss<'t, T: Scalar>(outputs: &[Var<'t, T>], targets: &[Target], task: Task) -> Result<Var<'t, T>> {
    if outputs.is_empty() || outputs.len() != targets.len() {
        return Err(Error::Contract(format!(
            "supervised_loss needs matching non-empty outputs and targets, got {} and {}",
            outputs.len(),
            targets.len()
        )));
    }
    let tape = outputs[0].tape();
    let b = T::lit(outputs.len() as f64);
    let mut total: Option<Var<'t, T>> = None;
    for (i, (&out, &target)) in outputs.iter().zip(targets).enumerate() {
        let term = match (task, target) {
            (Task::Regression, Target::Value(y)) => {
                let diff = out.add_scalar(T::lit(-y));
                diff.mul(diff)?.sum()
            }
            (Task::Multiclass | Task::Binary, Target::Class(y)) => {
                let k = out.shape()[1];
                if y >= k {
                    return Err(Error::Contract(format!("label {y} of graph {i} out of range for {k} classes")));
                }
                let mut onehot = Tensor::zeros(&[1, k]);
                onehot.set(0, y, T::one());
                let logp = out.row_softmax().ln_floor(T::lit(LOG_FLOOR));
                logp.mul(tape.constant(onehot))?.sum().scale(-T::one())
            }
            _ => {
                return Err(Error::Contract(format!("target of graph {i} does not match task {task:?}")));
            }
        };
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    let mean = total.unwrap().scale(T::one() / b);
    Ok(match task {
        Task::Regression => mean.sqrt(),
        _ => mean,
    })
}

/// `λ·sup + (1−λ)·mean_g(KL_g)` where `KL_g` is the layer-summed clustering
/// loss of graph `g`. Terms with a zero weight are left out of the graph.
pub fn total_loss<'t, T: Scalar>(sup: Option<Var<'t, T>>, kl_per_graph: &[Var<'t, T>], lambda: f64) -> Result<Var<'t, T>> {
    let mut total: Option<Var<'t, T>> = None;
    if lambda != 0.0 {
        let sup = sup.ok_or_else(|| Error::Contract("λ > 0 needs a supervised loss".into()))?;
        total = Some(sup.scale(T::lit(lambda)));
    }
    if lambda != 1.0 {
        if kl_per_graph.is_empty() {
            return Err(Error::Contract("λ < 1 needs clustering losses".into()));
        }
        let mut kl = kl_per_graph[0];
        for &k in &kl_per_graph[1..] {
            kl = kl.add(k)?;
        }
        let w = T::lit((1.0 - lambda) / kl_per_graph.len() as f64);
        let kl = kl.scale(w);
        total = Some(match total {
            Some(t) => t.add(kl)?,
            None => kl,
        });
    }
    total.ok_or_else(|| Error::Contract("empty loss".into()))
}

//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::dataset::{Target, Task};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    AucRoc,
    Rmse,
    R2,
}

impl MetricKind {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Multiclass | Task::Binary => MetricKind::Accuracy,
            Task::Regression => MetricKind::Rmse,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != MetricKind::Rmse
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::AucRoc => "auc_roc",
            MetricKind::Rmse => "rmse",
            MetricKind::R2 => "r2",
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

/// Task-appropriate metrics; `None` where undefined or not applicable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub auc_roc: Option<f64>,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
}

impl Metrics {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::AucRoc => self.auc_roc,
            MetricKind::Rmse => self.rmse,
            MetricKind::R2 => self.r2,
        }
    }

    /// Metrics from per-graph `1 × k` outputs.
    pub fn compute(task: Task, outputs: &[Tensor<f64>], targets: &[Target]) -> Metrics {
        match task {
            Task::Multiclass | Task::Binary => {
                let labels: Vec<usize> = targets.iter().map(|t| t.class().unwrap_or(usize::MAX)).collect();
                let preds: Vec<usize> = outputs.iter().map(|o| argmax(o.row(0))).collect();
                let auc = if task == Task::Binary {
                    let scores: Vec<f64> = outputs.iter().map(|o| o.row_softmax().get(0, o.cols() - 1)).collect();
                    let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                    auc_roc(&scores, &pos)
                } else {
                    None
                };
                Metrics {
                    accuracy: Some(accuracy(&preds, &labels)),
                    auc_roc: auc,
                    ..Default::default()
                }
            }
            Task::Regression => {
                let preds: Vec<f64> = outputs.iter().map(|o| o.get(0, 0)).collect();
                let ys: Vec<f64> = targets.iter().map(|t| t.as_f64()).collect();
                Metrics {
                    rmse: Some(rmse(&preds, &ys)),
                    r2: r2(&preds, &ys),
                    ..Default::default()
                }
            }
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / preds.len() as f64
}

/// Area under the ROC curve as the fraction of concordant
/// (positive, negative) pairs, ties counting one half. `None` when either
/// class is absent.
pub fn auc_roc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &p in &pos {
        for &n in &neg {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(total / (pos.len() * neg.len()) as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let mse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64;
    mse.sqrt()
}

/// Coefficient of determination; `None` for constant targets.
pub fn r2(preds: &[f64], targets: &[f64]) -> Option<f64> {
    if targets.is_empty() {
        return None;
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Summary { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(auc_roc(&[0.1, 0.2, 0.9], &[false, false, true]), Some(1.0));
        assert_eq!(auc_roc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(auc_roc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn regression_examples() {
        assert_eq!(rmse(&[0.0, 2.0], &[1.0, 1.0]), 1.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(r2(&[1.0, 2.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn compute_binary() {
        let outs = vec![
            Tensor::from_rows(&[&[1.0, 0.0]]),
            Tensor::from_rows(&[&[0.0, 1.0]]),
            Tensor::from_rows(&[&[0.0, 2.0]]),
        ];
        let m = Metrics::compute(Task::Binary, &outs, &[Target::Class(0), Target::Class(0), Target::Class(1)]);
        assert!((m.accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.auc_roc, Some(1.0));
        assert_eq!(m.rmse, None);
    }

    #[test]
    fn summary_order_independent() {
        let a = summarize(&[0.5, 1.0, 0.75]).unwrap();
        let b = summarize(&[0.75, 0.5, 1.0]).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-15 && (a.std - b.std).abs() < 1e-15);
    }
}

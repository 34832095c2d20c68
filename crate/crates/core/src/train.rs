//! Two-timescale training: supervised batch steps that leave the keys alone,
//! followed by one clustering step per epoch that moves everything.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{stratified_kfold, DatasetTable, Target, Task};
use crate::error::{Error, Result};
use crate::loss::{graph_clustering_loss, supervised_loss, total_loss};
use crate::metrics::{summarize, MetricKind, Metrics, Summary};
use crate::model::{Dropout, GraphInput, Model, ModelConfig};
use crate::optim::{Adam, AdamConfig, UpdateScope};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Dropout rate on the initial queries during batch steps.
    pub dropout: f64,
    pub seed: u64,
    /// λ used by batch steps.
    pub batch_lambda: f64,
    /// λ used by the epoch-end step.
    pub epoch_lambda: f64,
    /// Whether the epoch-end step runs at all.
    pub epoch_kl_step: bool,
    /// Model selection metric; defaults to accuracy or RMSE by task.
    pub selection_metric: Option<MetricKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 500,
            batch_size: 32,
            max_epochs: 2000,
            dropout: 0.0,
            seed: 0,
            batch_lambda: 1.0,
            epoch_lambda: 0.0,
            epoch_kl_step: true,
            selection_metric: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        for (name, l) in [("batch_lambda", self.batch_lambda), ("epoch_lambda", self.epoch_lambda)] {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("{name} {l} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn metric(&self, task: Task) -> MetricKind {
        self.selection_metric.unwrap_or(MetricKind::default_for(task))
    }
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sup_loss: f64,
    pub kl_loss: Option<f64>,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// Loss of every batch step, in order.
    pub batch_losses: Vec<f64>,
    /// Loss of the epoch-end step.
    pub kl_loss: Option<f64>,
}

impl EpochReport {
    pub fn mean_batch_loss(&self) -> f64 {
        if self.batch_losses.is_empty() {
            return 0.0;
        }
        self.batch_losses.iter().sum::<f64>() / self.batch_losses.len() as f64
    }
}

pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    opt: Adam<T>,
    rng: Rng,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let named = model.named_params();
        let params: Vec<&Tensor<T>> = named.iter().map(|(_, t, _)| *t).collect();
        let opt = Adam::new(AdamConfig::default(), &params, model.param_groups());
        Ok(Trainer {
            rng: rng::seeded(cfg.seed),
            model,
            cfg,
            opt,
            epoch: 0,
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer(&self) -> &Adam<T> {
        &self.opt
    }

    /// Learning rate of the current epoch.
    pub fn lr(&self) -> f64 {
        self.cfg.lr * self.cfg.lr_decay.powi((self.epoch / self.cfg.lr_decay_every) as i32)
    }

    fn apply<'t>(&mut self, tape: &'t Tape<T>, loss: Var<'t, T>, vars: &[Var<'t, T>], scope: UpdateScope) -> Result<()> {
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
        let lr = self.lr();
        self.opt.step(self.model.params_mut(), &grads, scope, lr)
    }

    fn batch_step(&mut self, inputs: &[&GraphInput<T>], targets: &[Target], batch: usize) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let lambda = self.cfg.batch_lambda;
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut kls = Vec::new();
        for input in inputs {
            let dropout = Some(Dropout {
                rate: self.cfg.dropout,
                rng: &mut self.rng,
            });
            let fwd = bound.forward(&tape, input, dropout)?;
            outputs.push(fwd.output);
            if lambda < 1.0 {
                kls.extend(graph_clustering_loss(&fwd.assignments)?);
            }
        }
        let sup = if lambda > 0.0 {
            Some(supervised_loss(&outputs, targets, self.model.config.task)?)
        } else {
            None
        };
        let loss = total_loss(sup, &kls, lambda)?;
        let value = loss.item().to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "supervised", batch });
        }
        let vars = bound.vars();
        self.apply(&tape, loss, &vars, UpdateScope::AllButKeys)?;
        Ok(value)
    }

    /// One full pass with the epoch-end λ, updating every parameter.
    fn clustering_step(&mut self, inputs: &[GraphInput<T>], targets: &[Target], batch: usize) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let lambda = self.cfg.epoch_lambda;
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut kls = Vec::with_capacity(inputs.len());
        for input in inputs {
            let fwd = bound.forward(&tape, input, None)?;
            outputs.push(fwd.output);
            kls.extend(graph_clustering_loss(&fwd.assignments)?);
        }
        let sup = if lambda > 0.0 {
            Some(supervised_loss(&outputs, targets, self.model.config.task)?)
        } else {
            None
        };
        let loss = total_loss(sup, &kls, lambda)?;
        let value = loss.item().to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "clustering", batch });
        }
        let vars = bound.vars();
        self.apply(&tape, loss, &vars, UpdateScope::All)?;
        Ok(value)
    }

    pub fn train_epoch(&mut self, inputs: &[GraphInput<T>], targets: &[Target]) -> Result<EpochReport> {
        self.train_epoch_observed(inputs, targets, |_| {})
    }

    /// As [`train_epoch`](Self::train_epoch), calling `observe` after every
    /// optimizer step (batch steps first, then the epoch-end step).
    pub fn train_epoch_observed(
        &mut self,
        inputs: &[GraphInput<T>],
        targets: &[Target],
        mut observe: impl FnMut(&Model<T>),
    ) -> Result<EpochReport> {
        if inputs.len() != targets.len() {
            return Err(Error::Contract(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut self.rng);
        let mut batch_losses = Vec::new();
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch_inputs: Vec<&GraphInput<T>> = chunk.iter().map(|&i| &inputs[i]).collect();
            let batch_targets: Vec<Target> = chunk.iter().map(|&i| targets[i]).collect();
            batch_losses.push(self.batch_step(&batch_inputs, &batch_targets, b)?);
            observe(&self.model);
        }
        let kl_loss = if self.cfg.epoch_kl_step {
            let v = self.clustering_step(inputs, targets, batch_losses.len())?;
            observe(&self.model);
            Some(v)
        } else {
            None
        };
        self.epoch += 1;
        Ok(EpochReport { batch_losses, kl_loss })
    }
}

/// Outputs of every graph as `f64`, without dropout.
pub fn predict_all<T: Scalar>(model: &Model<T>, inputs: &[GraphInput<T>]) -> Result<Vec<Tensor<f64>>> {
    inputs.iter().map(|x| Ok(model.predict(x)?.output.cast())).collect()
}

pub fn evaluate<T: Scalar>(model: &Model<T>, inputs: &[GraphInput<T>], targets: &[Target]) -> Result<Metrics> {
    let outputs = predict_all(model, inputs)?;
    Ok(Metrics::compute(model.config.task, &outputs, targets))
}

#[derive(Clone, Debug)]
pub struct FitReport<T> {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch of the selected model, 0 for the initial parameters.
    pub best_epoch: usize,
    pub best_metrics: Option<Metrics>,
    pub best_model: Model<T>,
}

/// Labeled graphs ready for the model.
#[derive(Clone, Copy)]
pub struct Split<'a, T> {
    pub inputs: &'a [GraphInput<T>],
    pub targets: &'a [Target],
}

/// Trains for `cfg.max_epochs`, keeping the parameters with the best
/// validation metric (the final ones when there is no validation set).
pub fn fit<T: Scalar>(
    model: Model<T>,
    cfg: &TrainConfig,
    train: Split<'_, T>,
    val: Option<Split<'_, T>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitReport<T>> {
    let task = model.config.task;
    let metric = cfg.metric(task);
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut best: Option<(f64, usize, Metrics, Model<T>)> = None;
    let mut best_metrics = None;
    if let Some(v) = val {
        let m = evaluate(&trainer.model, v.inputs, v.targets)?;
        best_metrics = Some(m);
        if let Some(score) = m.get(metric) {
            best = Some((score, 0, m, trainer.model.clone()));
        }
    }
    let mut records = Vec::with_capacity(cfg.max_epochs);
    for _ in 0..cfg.max_epochs {
        let report = trainer.train_epoch(train.inputs, train.targets)?;
        let epoch = trainer.epoch();
        let mut val_metric = None;
        if let Some(v) = val {
            let m = evaluate(&trainer.model, v.inputs, v.targets)?;
            val_metric = m.get(metric);
            if let Some(score) = val_metric {
                if best.as_ref().is_none_or(|b| metric.better(score, b.0)) {
                    best = Some((score, epoch, m, trainer.model.clone()));
                }
            }
        }
        let record = EpochRecord {
            epoch,
            sup_loss: report.mean_batch_loss(),
            kl_loss: report.kl_loss,
            val_metric,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(match best {
        Some((_, best_epoch, m, best_model)) => FitReport {
            records,
            best_epoch,
            best_metrics: Some(m),
            best_model,
        },
        None => FitReport {
            records,
            best_epoch: trainer.epoch(),
            best_metrics,
            best_model: trainer.model,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub best_epoch: usize,
    /// Selection metric at the best epoch.
    pub metric: Option<f64>,
    pub metrics: Metrics,
    pub records: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric: MetricKind,
    pub folds: Vec<FoldResult>,
    pub summary: Option<Summary>,
}

impl CvReport {
    pub fn new(metric: MetricKind, folds: Vec<FoldResult>) -> Self {
        let values: Vec<f64> = folds.iter().filter_map(|f| f.metric).collect();
        CvReport {
            metric,
            summary: summarize(&values),
            folds,
        }
    }
}

/// Seeds of fold `fold`: (model initialization, training).
pub fn fold_seeds(master: u64, fold: usize) -> (u64, u64) {
    let f = fold as u64;
    (rng::derive_seed(master, 2 * f), rng::derive_seed(master, 2 * f + 1))
}

/// Trains and validates one fold. `inputs` covers every graph of `ds`.
pub fn run_fold<T: Scalar>(
    ds: &DatasetTable,
    inputs: &[GraphInput<T>],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    split: &crate::dataset::FoldSplit,
    fold: usize,
) -> Result<FoldResult> {
    let (init_seed, train_seed) = fold_seeds(cfg.seed, fold);
    let pick = |idx: &[usize]| -> (Vec<GraphInput<T>>, Vec<Target>) {
        (
            idx.iter().map(|&i| inputs[i].clone()).collect(),
            idx.iter().map(|&i| ds.graphs()[i].target()).collect(),
        )
    };
    let (tr_x, tr_y) = pick(&split.training_indices(fold));
    let (va_x, va_y) = pick(&split.validation_indices(fold));
    let model = Model::new(model_cfg.clone(), init_seed)?;
    let fold_cfg = TrainConfig {
        seed: train_seed,
        ..cfg.clone()
    };
    let report = fit(
        model,
        &fold_cfg,
        Split {
            inputs: &tr_x,
            targets: &tr_y,
        },
        Some(Split {
            inputs: &va_x,
            targets: &va_y,
        }),
        |_| {},
    )?;
    let metrics = report.best_metrics.unwrap_or_default();
    Ok(FoldResult {
        fold,
        best_epoch: report.best_epoch,
        metric: metrics.get(cfg.metric(model_cfg.task)),
        metrics,
        records: report.records,
    })
}

/// Sequential k-fold cross-validation over precomputed `inputs`.
pub fn cross_validate<T: Scalar>(
    ds: &DatasetTable,
    inputs: &[GraphInput<T>],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    k: usize,
) -> Result<CvReport> {
    let split = stratified_kfold(ds, k, cfg.seed)?;
    let folds = (0..k)
        .map(|f| run_fold(ds, inputs, model_cfg, cfg, &split, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::new(cfg.metric(model_cfg.task), folds))
}

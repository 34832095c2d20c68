use graphmem::dataset::synthetic::two_community_dataset;
use graphmem::dataset::{DatasetTable, Target};
use graphmem::diffusion::DiffusionConfig;
use graphmem::metrics::MetricKind;
use graphmem::model::{GraphInput, Model, ModelConfig, ModelKind};
use graphmem::train::{cross_validate, evaluate, fit, Split, TrainConfig, Trainer};
use graphmem::{Error, Tensor64};

fn config(ds: &DatasetTable, kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        task: ds.task(),
        d_in: ds.d_in(),
        d_e: ds.d_e(),
        n_max: ds.max_nodes(),
        outputs: 2,
        hidden_dim: 16,
        key_schedule: vec![4, 1],
        heads: 2,
        temperature: 1.0,
        leaky_slope: 0.01,
        egat_layers: 1,
        edge_hidden: 2,
        shared_edge_dim: 2,
    }
}

fn inputs(ds: &DatasetTable, cfg: &ModelConfig) -> (Vec<GraphInput<f64>>, Vec<Target>) {
    let d = DiffusionConfig::default();
    let x = ds
        .graphs()
        .iter()
        .map(|g| GraphInput::from_graph(g, cfg.kind, &d, cfg.n_max, None).unwrap())
        .collect();
    (x, ds.graphs().iter().map(|g| g.target()).collect())
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch_size: 4,
        max_epochs: 3,
        dropout: 0.1,
        seed: 42,
        ..Default::default()
    }
}

#[test]
fn keys_move_only_in_the_epoch_end_step() {
    let ds = two_community_dataset(20, 0.6, 1).unwrap();
    for kind in [ModelKind::Gmn, ModelKind::MemGnn] {
        let cfg = config(&ds, kind);
        let (x, y) = inputs(&ds, &cfg);
        let mut trainer = Trainer::new(Model::<f64>::new(cfg, 3).unwrap(), train_cfg()).unwrap();
        for _ in 0..3 {
            let mut sums = vec![trainer.model.key_checksum()];
            let report = trainer
                .train_epoch_observed(&x, &y, |m| sums.push(m.key_checksum()))
                .unwrap();
            let batches = report.batch_losses.len();
            assert_eq!(batches, 5);
            assert_eq!(sums.len(), batches + 2);
            // unchanged across every batch step, changed by the final step
            assert!(sums[..=batches].iter().all(|&s| s == sums[0]));
            assert_ne!(sums[batches + 1], sums[0]);
            assert!(report.kl_loss.unwrap() >= 0.0);
        }
    }
}

#[test]
fn keys_frozen_without_epoch_step() {
    let ds = two_community_dataset(20, 0.6, 1).unwrap();
    let cfg = config(&ds, ModelKind::Gmn);
    let (x, y) = inputs(&ds, &cfg);
    let model = Model::<f64>::new(cfg, 3).unwrap();
    let keys_before: Vec<_> = model.layers.iter().map(|l| l.keys.clone()).collect();
    let head_before = model.head_w.clone();
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            epoch_kl_step: false,
            ..train_cfg()
        },
    )
    .unwrap();
    let report = trainer.train_epoch(&x, &y).unwrap();
    assert!(report.kl_loss.is_none());
    let keys_after: Vec<_> = trainer.model.layers.iter().map(|l| l.keys.clone()).collect();
    assert_eq!(keys_before, keys_after);
    assert_ne!(trainer.model.head_w, head_before);
}

#[test]
fn loss_trace_is_bitwise_reproducible() {
    let ds = two_community_dataset(20, 0.6, 2).unwrap();
    let run = || {
        let cfg = config(&ds, ModelKind::Gmn);
        let (x, y) = inputs(&ds, &cfg);
        let mut trainer = Trainer::new(Model::<f64>::new(cfg, 8).unwrap(), train_cfg()).unwrap();
        let mut trace = Vec::new();
        for _ in 0..3 {
            let r = trainer.train_epoch(&x, &y).unwrap();
            trace.extend(r.batch_losses.iter().map(|v| v.to_bits()));
            trace.push(r.kl_loss.unwrap().to_bits());
        }
        trace
    };
    assert_eq!(run(), run());
}

#[test]
fn learning_rate_halves_on_schedule() {
    let ds = two_community_dataset(8, 0.6, 2).unwrap();
    let cfg = config(&ds, ModelKind::Gmn);
    let (x, y) = inputs(&ds, &cfg);
    let mut trainer = Trainer::new(
        Model::<f64>::new(cfg, 8).unwrap(),
        TrainConfig {
            lr_decay_every: 2,
            ..train_cfg()
        },
    )
    .unwrap();
    let lrs: Vec<f64> = (0..5)
        .map(|_| {
            let lr = trainer.lr();
            trainer.train_epoch(&x, &y).unwrap();
            lr
        })
        .collect();
    assert_eq!(lrs, vec![0.01, 0.01, 0.005, 0.005, 0.0025]);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let ds = two_community_dataset(8, 0.6, 2).unwrap();
    let cfg = config(&ds, ModelKind::Gmn);
    let (x, y) = inputs(&ds, &cfg);
    let mut model = Model::<f64>::new(cfg, 8).unwrap();
    model.head_b = Tensor64::full(&[1, 2], f64::NAN);
    let mut trainer = Trainer::new(model, train_cfg()).unwrap();
    let err = trainer.train_epoch(&x, &y).unwrap_err();
    assert!(matches!(err, Error::NonFinite { batch: 0, .. }), "{err}");
}

#[test]
fn zero_epochs_keeps_initial_parameters() {
    let ds = two_community_dataset(8, 0.6, 2).unwrap();
    let cfg = config(&ds, ModelKind::Gmn);
    let (x, y) = inputs(&ds, &cfg);
    let model = Model::<f64>::new(cfg, 8).unwrap();
    let split = Split {
        inputs: &x,
        targets: &y,
    };
    let report = fit(
        model.clone(),
        &TrainConfig {
            max_epochs: 0,
            ..train_cfg()
        },
        split,
        Some(split),
        |_| {},
    )
    .unwrap();
    assert!(report.records.is_empty());
    assert_eq!(report.best_epoch, 0);
    assert_eq!(report.best_model, model);
}

#[test]
fn evaluation_is_deterministic() {
    let ds = two_community_dataset(10, 0.6, 2).unwrap();
    let cfg = config(&ds, ModelKind::MemGnn);
    let (x, y) = inputs(&ds, &cfg);
    let model = Model::<f64>::new(cfg, 8).unwrap();
    assert_eq!(evaluate(&model, &x, &y).unwrap(), evaluate(&model, &x, &y).unwrap());
}

#[test]
fn two_fold_cv_on_separable_data() {
    let ds = two_community_dataset(40, 0.7, 5).unwrap();
    let cfg = config(&ds, ModelKind::Gmn);
    let (x, _) = inputs(&ds, &cfg);
    let tc = TrainConfig {
        max_epochs: 40,
        lr: 0.01,
        batch_size: 8,
        dropout: 0.0,
        seed: 11,
        ..Default::default()
    };
    let a = cross_validate(&ds, &x, &cfg, &tc, 2).unwrap();
    assert_eq!(a.metric, MetricKind::Accuracy);
    assert_eq!(a.folds.len(), 2);
    let mean = a.summary.unwrap().mean;
    assert!(mean >= 0.95, "mean accuracy {mean}");
    let b = cross_validate(&ds, &x, &cfg, &tc, 2).unwrap();
    assert_eq!(a, b);
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use graphmem::autodiff::corrupt_backward_rule;
use graphmem::checkpoint;
use graphmem::dataset::{
    load_molecule_dataset, load_molecule_dataset_as, load_tu_dataset_with, stratified_kfold, DatasetTable, Target,
    TuOptions,
};
use graphmem::diffusion::{cache::load_or_compute, downsample_edges, DiffusionConfig};
use graphmem::gradsuite;
use graphmem::metrics::{MetricKind, Metrics};
use graphmem::model::{GraphInput, ModelConfig, ModelKind};
use graphmem::rng::derive_seed;
use graphmem::train::{evaluate, fit, fold_seeds, run_fold, CvReport, EpochRecord, Split};
use graphmem::{GraphInput64, Model64};
use rayon::prelude::*;

use crate::config::{resolve, DatasetFormat, RunConfig};
use crate::{CliError, Command, ConfigArgs, CACHE_ENV};

/// Header of the cross-validation CSV.
pub const CV_HEADER: [&str; 5] = ["fold", "best_epoch", "metric", "value", "std"];
/// Header of the evaluation CSV.
pub const EVAL_HEADER: [&str; 2] = ["metric", "value"];

const DOWNSAMPLE_STREAM: u64 = 0x646f_776e;

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { args } => train(&config(&args)?),
        Command::Cv {
            args,
            folds,
            fold,
            jobs,
        } => cv(&config(&args)?, folds, fold, jobs),
        Command::Eval { args, checkpoint, out } => eval(&config(&args)?, &checkpoint, out.as_deref()),
        Command::ExportClusters { args, checkpoint, out } => export_clusters(&config(&args)?, &checkpoint, &out),
        Command::Gradcheck { seed, corrupt_rule } => gradcheck(seed, corrupt_rule.as_deref()),
        Command::Preprocess { args, cache_dir } => preprocess(&config(&args)?, cache_dir),
    }
}

fn config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    resolve(args.config.as_deref(), &args.overrides)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::data(e.to_string())
}

fn number(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn env_cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Loads the dataset, downsampling edges when configured.
pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetTable, CliError> {
    let d = &cfg.dataset;
    let ds = match d.format {
        DatasetFormat::Tu => {
            let name = match &d.name {
                Some(n) => n.clone(),
                None => d
                    .path
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .ok_or_else(|| CliError::config("dataset.name: cannot infer from path"))?,
            };
            load_tu_dataset_with(&d.path, &name, TuOptions {
                max_degree: d.max_degree,
            })?
        }
        DatasetFormat::Molecule => match d.task {
            Some(t) => load_molecule_dataset_as(&d.path, t)?,
            None => load_molecule_dataset(&d.path)?,
        },
    };
    let Some(down) = &cfg.downsample else {
        return Ok(ds);
    };
    let dcfg = cfg.diffusion.to_config();
    let base = derive_seed(cfg.train.seed, DOWNSAMPLE_STREAM);
    let graphs = ds
        .graphs()
        .iter()
        .enumerate()
        .map(|(i, g)| downsample_edges(g, down.ratio, down.method, &dcfg, derive_seed(base, i as u64)))
        .collect::<graphmem::Result<Vec<_>>>()?;
    // distinct cache entries per downsampling
    let name = format!("{}+{:?}{}s{}", ds.name, down.method, down.ratio, cfg.train.seed).to_lowercase();
    Ok(DatasetTable::new(name, graphs, ds.task(), ds.class_count())?)
}

/// Applies the `n_max` limit, dropping oversized graphs when allowed.
fn limit_size(cfg: &RunConfig, ds: DatasetTable) -> Result<(DatasetTable, usize), CliError> {
    let n_max = cfg.dataset.n_max.unwrap_or(ds.max_nodes());
    if cfg.model.kind == ModelKind::MemGnn || ds.max_nodes() <= n_max {
        return Ok((ds, n_max));
    }
    if !cfg.dataset.drop_oversized {
        let (i, g) = ds
            .graphs()
            .iter()
            .enumerate()
            .find(|(_, g)| g.node_count() > n_max)
            .unwrap();
        return Err(CliError::config(format!(
            "dataset.n_max: graph {i} has {} nodes, more than {n_max} (set drop_oversized to skip such graphs)",
            g.node_count()
        )));
    }
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| ds.graphs()[i].node_count() <= n_max).collect();
    log::info!("dropping {} graphs larger than {n_max} nodes", ds.len() - keep.len());
    let ds = ds.subset(&keep);
    if ds.is_empty() {
        return Err(CliError::data("no graph fits within n_max"));
    }
    Ok((ds, n_max))
}

pub fn model_config(cfg: &RunConfig, ds: &DatasetTable, n_max: usize) -> ModelConfig {
    let m = &cfg.model;
    ModelConfig {
        kind: m.kind,
        task: ds.task(),
        d_in: ds.d_in(),
        d_e: ds.d_e(),
        n_max,
        outputs: ds.class_count().unwrap_or(1),
        hidden_dim: m.hidden_dim,
        key_schedule: m.key_schedule.clone(),
        heads: m.heads,
        temperature: m.temperature,
        leaky_slope: m.leaky_slope,
        egat_layers: m.egat_layers,
        edge_hidden: m.edge_hidden,
        shared_edge_dim: m.shared_edge_dim,
    }
}

fn build_inputs(
    ds: &DatasetTable,
    kind: ModelKind,
    dcfg: &DiffusionConfig,
    n_max: usize,
    cache: Option<&Path>,
) -> Result<Vec<GraphInput64>, CliError> {
    let rows = match (kind, cache) {
        (ModelKind::Gmn, Some(dir)) => Some(load_or_compute(ds, dcfg, Some(dir))?),
        _ => None,
    };
    let inputs = ds
        .graphs()
        .iter()
        .enumerate()
        .map(|(i, g)| GraphInput::from_graph(g, kind, dcfg, n_max, rows.as_ref().map(|r| &r[i])))
        .collect::<graphmem::Result<Vec<_>>>()?;
    Ok(inputs)
}

fn targets(ds: &DatasetTable) -> Vec<Target> {
    ds.graphs().iter().map(|g| g.target()).collect()
}

fn prepare(cfg: &RunConfig) -> Result<(DatasetTable, ModelConfig, Vec<GraphInput64>), CliError> {
    let ds = load_dataset(cfg)?;
    let (ds, n_max) = limit_size(cfg, ds)?;
    let mc = model_config(cfg, &ds, n_max);
    mc.validate()?;
    let inputs = build_inputs(&ds, mc.kind, &cfg.diffusion.to_config(), n_max, env_cache_dir().as_deref())?;
    log::info!(
        "{}: {} graphs, {} features, max {} nodes",
        ds.name,
        ds.len(),
        ds.d_in(),
        ds.max_nodes()
    );
    Ok((ds, mc, inputs))
}

fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let (ds, mc, inputs) = prepare(cfg)?;
    let y = targets(&ds);
    let (init_seed, train_seed) = fold_seeds(cfg.train.seed, 0);
    let model = Model64::new(mc, init_seed)?;
    let tc = graphmem::train::TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let report = fit(
        model,
        &tc,
        Split {
            inputs: &inputs,
            targets: &y,
        },
        None,
        |r| {
            if r.epoch % 10 == 0 {
                log::info!("epoch {}: loss {:.6}", r.epoch, r.sup_loss);
            }
        },
    )?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    let ckpt = cfg.output_dir.join("model.ckpt");
    checkpoint::save(&report.best_model, &ckpt)?;
    write_epoch_log(&cfg.output_dir.join("epochs.jsonl"), &report.records)?;
    println!("{}", ckpt.display());
    Ok(())
}

/// Writes the cross-validation CSV: one row per fold, then `mean`.
pub fn write_cv_csv<W: Write>(w: W, report: &CvReport) -> Result<(), CliError> {
    let mut out = csv_writer(w);
    out.write_record(CV_HEADER).map_err(csv_err)?;
    let metric = report.metric.name();
    for f in &report.folds {
        out.write_record([
            f.fold.to_string(),
            f.best_epoch.to_string(),
            metric.to_string(),
            number(f.metric),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    out.write_record([
        "mean".to_string(),
        String::new(),
        metric.to_string(),
        number(report.summary.map(|s| s.mean)),
        number(report.summary.map(|s| s.std)),
    ])
    .map_err(csv_err)?;
    out.flush()?;
    Ok(())
}

fn cv(cfg: &RunConfig, k: usize, only: Option<usize>, jobs: Option<usize>) -> Result<(), CliError> {
    if k < 2 {
        return Err(CliError::config(format!("folds: {k} must be at least 2")));
    }
    if let Some(f) = only {
        if f >= k {
            return Err(CliError::config(format!("fold: {f} must be below folds = {k}")));
        }
    }
    let (ds, mc, inputs) = prepare(cfg)?;
    let split = stratified_kfold(&ds, k, cfg.train.seed)?;
    let folds: Vec<usize> = match only {
        Some(f) => vec![f],
        None => (0..k).collect(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(format!("jobs: {e}")))?;
    let results = pool.install(|| {
        folds
            .par_iter()
            .map(|&f| {
                let r = run_fold(&ds, &inputs, &mc, &cfg.train, &split, f)?;
                log::info!("fold {f}: best epoch {}, {:?}", r.best_epoch, r.metric);
                Ok(r)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let report = CvReport::new(cfg.train.metric(mc.task), results);
    fs::create_dir_all(&cfg.output_dir)?;
    for f in &report.folds {
        write_epoch_log(&cfg.output_dir.join(format!("fold{}_epochs.jsonl", f.fold)), &f.records)?;
    }
    let path = cfg.output_dir.join("cv_metrics.csv");
    write_cv_csv(BufWriter::new(File::create(&path)?), &report)?;
    if let Some(s) = report.summary {
        println!("{} {:.6} +- {:.6}", report.metric.name(), s.mean, s.std);
    }
    println!("{}", path.display());
    Ok(())
}

/// Fails when the checkpoint cannot read this dataset.
pub fn check_compatible(mc: &ModelConfig, ds: &DatasetTable) -> Result<(), CliError> {
    let mismatch = |what: &str, model: String, data: String| {
        Err(CliError::data(format!("checkpoint expects {what} {model}, dataset has {data}")))
    };
    if mc.d_in != ds.d_in() {
        return mismatch("node feature size", mc.d_in.to_string(), ds.d_in().to_string());
    }
    if mc.d_e != ds.d_e() {
        return mismatch("edge feature size", mc.d_e.to_string(), ds.d_e().to_string());
    }
    if mc.task != ds.task() {
        return mismatch("task", format!("{:?}", mc.task), format!("{:?}", ds.task()));
    }
    let outputs = ds.class_count().unwrap_or(1);
    if mc.outputs != outputs {
        return mismatch("outputs", mc.outputs.to_string(), outputs.to_string());
    }
    if mc.kind == ModelKind::Gmn && ds.max_nodes() > mc.n_max {
        return mismatch("at most n_max nodes", mc.n_max.to_string(), ds.max_nodes().to_string());
    }
    Ok(())
}

fn load_for_checkpoint(cfg: &RunConfig, path: &Path) -> Result<(Model64, DatasetTable, Vec<GraphInput64>), CliError> {
    let model: Model64 = checkpoint::load(path).map_err(|e| match e {
        graphmem::Error::Config(m) => CliError::data(format!("{}: {m}", path.display())),
        e => e.into(),
    })?;
    let ds = load_dataset(cfg)?;
    check_compatible(&model.config, &ds)?;
    let inputs = build_inputs(
        &ds,
        model.config.kind,
        &cfg.diffusion.to_config(),
        model.config.n_max,
        env_cache_dir().as_deref(),
    )?;
    Ok((model, ds, inputs))
}

pub fn write_eval_csv<W: Write>(w: W, m: &Metrics) -> Result<(), CliError> {
    let mut out = csv_writer(w);
    out.write_record(EVAL_HEADER).map_err(csv_err)?;
    for kind in [MetricKind::Accuracy, MetricKind::AucRoc, MetricKind::Rmse, MetricKind::R2] {
        if let Some(v) = m.get(kind) {
            out.write_record([kind.name().to_string(), number(Some(v))]).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn eval(cfg: &RunConfig, ckpt: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (model, ds, inputs) = load_for_checkpoint(cfg, ckpt)?;
    let m = evaluate(&model, &inputs, &targets(&ds))?;
    match out {
        Some(p) => write_eval_csv(BufWriter::new(File::create(p)?), &m),
        None => write_eval_csv(std::io::stdout().lock(), &m),
    }
}

fn export_clusters(cfg: &RunConfig, ckpt: &Path, out: &Path) -> Result<(), CliError> {
    let (model, _, inputs) = load_for_checkpoint(cfg, ckpt)?;
    fs::create_dir_all(out)?;
    let mut writers = model
        .config
        .key_schedule
        .iter()
        .enumerate()
        .map(|(l, &k)| {
            let path = out.join(format!("clusters_layer{l}.csv"));
            let mut w = csv_writer(BufWriter::new(File::create(&path)?));
            let mut header = vec!["graph_id".to_string(), "node_id".into(), "cluster".into()];
            header.extend((0..k).map(|c| format!("p{c}")));
            w.write_record(&header).map_err(csv_err)?;
            Ok(w)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    for (g, input) in inputs.iter().enumerate() {
        let pred = model.predict(input)?;
        for (a, w) in pred.assignments.iter().zip(&mut writers) {
            for (node, cluster) in a.argmax().into_iter().enumerate() {
                let mut row = vec![g.to_string(), node.to_string(), cluster.to_string()];
                row.extend(a.values.row(node).iter().map(|p| p.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    for mut w in writers {
        w.flush()?;
    }
    println!("{}", out.display());
    Ok(())
}

fn gradcheck(seed: u64, corrupt: Option<&str>) -> Result<(), CliError> {
    if let Some(op) = corrupt {
        if !corrupt_backward_rule(Some(op)) {
            return Err(CliError::config(format!("corrupt-rule: unknown op {op:?}")));
        }
    }
    let results = gradsuite::run(seed)?;
    corrupt_backward_rule(None);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<width$}  {:.3e}  {status}", r.name, r.max_rel_error);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks below {:e}", results.len(), gradsuite::TOLERANCE);
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

fn preprocess(cfg: &RunConfig, dir: Option<PathBuf>) -> Result<(), CliError> {
    let dir = dir
        .or_else(env_cache_dir)
        .unwrap_or_else(|| cfg.output_dir.join("cache"));
    let ds = load_dataset(cfg)?;
    let dcfg = cfg.diffusion.to_config();
    let rows = load_or_compute(&ds, &dcfg, Some(&dir))?;
    let key = graphmem::diffusion::cache::CacheKey::new(&ds.name, &dcfg);
    println!("{} ({} graphs)", key.path_in(&dir).display(), rows.len());
    Ok(())
}

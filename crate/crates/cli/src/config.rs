//! Run configuration, read from a TOML file and overridden by flags.

use std::path::{Path, PathBuf};

use graphmem::dataset::Task;
use graphmem::diffusion::{DiffusionConfig, DownsampleMethod, EmbeddingVariant, Solver, SortOrder};
use graphmem::model::ModelKind;
use graphmem::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Directory of `<name>_A.txt`, `<name>_graph_indicator.txt`, ... files.
    Tu,
    /// One JSON object per line.
    Molecule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// TU file prefix; defaults to the last component of `path`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Overrides task inference for molecule files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Degree one-hot cap for graphs without node attributes or labels.
    pub max_degree: usize,
    /// Topological embedding width; defaults to the largest graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    /// Drop graphs larger than `n_max` instead of failing.
    pub drop_oversized: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            path: PathBuf::new(),
            format: DatasetFormat::Tu,
            name: None,
            task: None,
            max_degree: 64,
            n_max: None,
            drop_oversized: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub key_schedule: Vec<usize>,
    pub heads: usize,
    pub hidden_dim: usize,
    /// Must equal the length of `key_schedule` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    pub temperature: f64,
    pub leaky_slope: f64,
    pub egat_layers: usize,
    pub edge_hidden: usize,
    pub shared_edge_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Gmn,
            key_schedule: vec![10, 1],
            heads: 5,
            hidden_dim: 100,
            layers: None,
            temperature: 1.0,
            leaky_slope: 0.01,
            egat_layers: 2,
            edge_hidden: 16,
            shared_edge_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub restart_prob: f64,
    pub embedding_variant: EmbeddingVariant,
    /// Sort each embedding row in descending order.
    pub sort: bool,
    pub solver: Solver,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DiffusionConfig::default();
        DiffusionSection {
            restart_prob: d.restart_prob,
            embedding_variant: d.variant,
            sort: d.sort_order.is_some(),
            solver: d.solver,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl DiffusionSection {
    pub fn to_config(&self) -> DiffusionConfig {
        DiffusionConfig {
            restart_prob: self.restart_prob,
            variant: self.embedding_variant,
            solver: self.solver,
            tol: self.tol,
            max_iter: self.max_iter,
            sort_order: self.sort.then_some(SortOrder::Descending),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownsampleSection {
    pub method: DownsampleMethod,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub diffusion: DiffusionSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downsample: Option<DownsampleSection>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            diffusion: DiffusionSection::default(),
            downsample: None,
            train: TrainConfig {
                batch_size: 20,
                ..TrainConfig::default()
            },
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{name}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err(field("dataset.path", "missing"));
        }
        let m = &self.model;
        let ks = &m.key_schedule;
        if ks.is_empty() {
            return Err(field("model.key_schedule", "must not be empty"));
        }
        if ks.last() != Some(&1) {
            return Err(field("model.key_schedule", format!("{ks:?} must end in 1")));
        }
        if ks.windows(2).any(|w| w[0] <= w[1]) {
            return Err(field("model.key_schedule", format!("{ks:?} must be strictly decreasing")));
        }
        if let Some(l) = m.layers {
            if l != ks.len() {
                return Err(field(
                    "model.layers",
                    format!("{l} does not match key_schedule length {}", ks.len()),
                ));
            }
        }
        if m.heads == 0 {
            return Err(field("model.heads", "must be at least 1"));
        }
        if m.hidden_dim == 0 {
            return Err(field("model.hidden_dim", "must be at least 1"));
        }
        if !(m.temperature > 0.0 && m.temperature.is_finite()) {
            return Err(field("model.temperature", format!("{} must be positive", m.temperature)));
        }
        if !(m.leaky_slope > 0.0 && m.leaky_slope < 1.0) {
            return Err(field("model.leaky_slope", format!("{} must lie in (0, 1)", m.leaky_slope)));
        }
        if m.kind == ModelKind::MemGnn && m.shared_edge_dim == 0 {
            return Err(field("model.shared_edge_dim", "must be at least 1"));
        }
        let d = &self.diffusion;
        if !(d.restart_prob > 0.0 && d.restart_prob < 1.0) {
            return Err(field("diffusion.restart_prob", format!("{} must lie in (0, 1)", d.restart_prob)));
        }
        if !(d.tol > 0.0) {
            return Err(field("diffusion.tol", format!("{} must be positive", d.tol)));
        }
        if let Some(ds) = &self.downsample {
            if !(ds.ratio > 0.0 && ds.ratio <= 1.0) {
                return Err(field("downsample.ratio", format!("{} must lie in (0, 1]", ds.ratio)));
            }
        }
        if self.dataset.n_max == Some(0) {
            return Err(field("dataset.n_max", "must be at least 1"));
        }
        self.train.validate().map_err(|e| {
            let msg = e.to_string();
            field("train", msg.trim_start_matches("config error: "))
        })
    }
}

/// Values given on the command line; each replaces the file's value.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Dataset path (TU directory or molecule file).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum)]
    pub model: Option<KindArg>,
    /// Comma-separated, e.g. 10,1.
    #[arg(long, value_delimiter = ',')]
    pub key_schedule: Option<Vec<usize>>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub restart_prob: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FormatArg {
    Tu,
    Molecule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum KindArg {
    Gmn,
    Memgnn,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.dataset {
            cfg.dataset.path = p.clone();
        }
        if let Some(f) = self.format {
            cfg.dataset.format = match f {
                FormatArg::Tu => DatasetFormat::Tu,
                FormatArg::Molecule => DatasetFormat::Molecule,
            };
        }
        if let Some(k) = self.model {
            cfg.model.kind = match k {
                KindArg::Gmn => ModelKind::Gmn,
                KindArg::Memgnn => ModelKind::MemGnn,
            };
        }
        if let Some(ks) = &self.key_schedule {
            cfg.model.key_schedule = ks.clone();
            cfg.model.layers = None;
        }
        if let Some(v) = self.heads {
            cfg.model.heads = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.model.hidden_dim = v;
        }
        if let Some(v) = self.temperature {
            cfg.model.temperature = v;
        }
        if let Some(v) = self.restart_prob {
            cfg.diffusion.restart_prob = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(p) = &self.output_dir {
            cfg.output_dir = p.clone();
        }
    }
}

/// Defaults, then the file (if any), then flags.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_once_a_path_is_set() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_err());
        cfg.dataset.path = "data/ENZYMES".into();
        cfg.validate().unwrap();
    }

    #[test]
    fn layers_must_match_schedule() {
        let cfg = RunConfig::parse(
            "[dataset]\npath = \"x\"\n[model]\nkey_schedule = [10, 1]\nlayers = 3\n",
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.message.contains("model.layers"), "{}", err.message);
    }

    #[test]
    fn schedule_errors_name_the_field() {
        for ks in ["[4, 2]", "[1, 4, 1]", "[]"] {
            let text = format!("[dataset]\npath = \"x\"\n[model]\nkey_schedule = {ks}\n");
            let err = RunConfig::parse(&text).unwrap().validate().unwrap_err();
            assert!(err.message.starts_with("model.key_schedule"), "{}", err.message);
        }
    }

    #[test]
    fn train_errors_name_the_field() {
        let cfg = RunConfig::parse("[dataset]\npath = \"x\"\n[train]\nbatch_size = 0\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.message, "train: batch_size must be at least 1");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::parse("[model]\nkeys = [2, 1]\n").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rate = 0.1\n").is_err());
    }
}

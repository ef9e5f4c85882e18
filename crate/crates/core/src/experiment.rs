//! Experiment configuration, data preparation and the train/evaluate
//! pipeline shared by the command line and the tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::io::{fingerprint, read_corpus};
use crate::corpus::{build_sequences, load_interactions, split_leave_one_out, Corpus, DelimitedFormat, SplitDataset};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport, DEFAULT_K};
use crate::heads::HeadConfig;
use crate::model::{ModelConfig, SeqRecModel, DEFAULT_INIT_STD};
use crate::numcore::Real;
use crate::synthetic::{CopyTask, ExclusionTask};
use crate::training::{grid_search, train, DesignFlags, GridRow, GridSpec, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Raw delimited interaction log.
    Interactions {
        path: PathBuf,
        #[serde(default)]
        format: DelimitedFormat,
    },
    /// Output directory of `prep`.
    Prepared { dir: PathBuf },
    SyntheticCopy(CopyTask),
    SyntheticExclusion(ExclusionTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub source: DataSource,
    #[serde(default = "default_min_seq_len")]
    pub min_seq_len: usize,
    #[serde(default = "default_min_item_freq")]
    pub min_item_freq: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
}

fn default_min_seq_len() -> usize {
    5
}
fn default_min_item_freq() -> usize {
    5
}
fn default_max_seq_len() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Dataset groups aggregated by geometric mean in reports.
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
}

fn default_k() -> usize {
    DEFAULT_K
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: DEFAULT_K, groups: Vec::new() }
    }
}

fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Read a config file; relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.dataset.source {
            DataSource::Interactions { path, .. } if path.is_relative() => *path = base.join(&*path),
            DataSource::Prepared { dir } if dir.is_relative() => *dir = base.join(&*dir),
            _ => {}
        }
        Ok(cfg)
    }

    /// Checks that do not need the data.
    pub fn validate_static(&self) -> Result<()> {
        let d = &self.dataset;
        if d.name.is_empty() || d.name.contains(',') {
            return Err(Error::Config(format!("dataset name {:?} must be non-empty and comma-free", d.name)));
        }
        if d.min_seq_len < 2 {
            return Err(Error::Config("min_seq_len must be at least 2".into()));
        }
        if d.max_seq_len == 0 || self.eval.k == 0 {
            return Err(Error::Config("max_seq_len and eval.k must be positive".into()));
        }
        if let EncoderConfig::Attention(a) = &self.encoder {
            if a.max_positions != 0 && a.max_positions < d.max_seq_len {
                return Err(Error::Config(format!(
                    "attention max_positions {} is below max_seq_len {}",
                    a.max_positions, d.max_seq_len
                )));
            }
        }
        self.model_config().encoder.validate()?;
        self.train.validate()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    /// Full validation once the catalog size is known.
    pub fn validate(&self, item_count: usize) -> Result<()> {
        self.validate_static()?;
        self.model_config().validate(item_count)
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut encoder = self.encoder.clone();
        if let EncoderConfig::Attention(a) = &mut encoder {
            if a.max_positions == 0 {
                a.max_positions = self.dataset.max_seq_len;
            }
        }
        ModelConfig { encoder, head: self.head.clone(), init_std: self.init_std }
    }

    /// Table row label, e.g. `GRU4Rec / Softmax + C`.
    pub fn label(&self) -> String {
        format!("{} / {}", self.encoder.name(), self.head.label())
    }
}

/// Load and filter the configured data source.
pub fn load_corpus(cfg: &DatasetConfig) -> Result<Corpus> {
    match &cfg.source {
        DataSource::Interactions { path, format } => {
            let loaded = load_interactions(path, format)?;
            if loaded.malformed > 0 {
                log::warn!(
                    "{}: skipped {} malformed rows (first at lines {:?})",
                    path.display(),
                    loaded.malformed,
                    loaded.malformed_lines
                );
            }
            build_sequences(&loaded.interactions, cfg.min_seq_len, cfg.min_item_freq)
        }
        DataSource::Prepared { dir } => read_corpus(dir),
        DataSource::SyntheticCopy(t) => t.generate(),
        DataSource::SyntheticExclusion(t) => t.generate(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub fingerprint: String,
    pub items: usize,
    pub users: usize,
    pub interactions: usize,
    pub train_windows: usize,
    pub train_targets: usize,
    pub valid_users: usize,
    pub test_users: usize,
}

impl DatasetSummary {
    pub fn new(name: &str, corpus: &Corpus, split: &SplitDataset) -> Self {
        DatasetSummary {
            name: name.to_string(),
            fingerprint: fingerprint(corpus),
            items: corpus.items.len(),
            users: corpus.sequences.len(),
            interactions: corpus.num_interactions(),
            train_windows: split.train.len(),
            train_targets: split.num_train_targets(),
            valid_users: split.valid.len(),
            test_users: split.test.len(),
        }
    }
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_VERSION"), option_env!("SEQREC_GIT_REV").unwrap_or("unknown"))
}

/// Everything needed to reproduce a run. Contains no wall-clock data, so two
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dataset: Option<DatasetSummary>,
    pub design: DesignFlags,
    pub training: Option<TrainReport>,
    pub grid: Option<Vec<GridRow>>,
    pub test: Option<MetricReport>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            code_version: code_version(),
            label: config.label(),
            seed: config.train.seed,
            config: config.clone(),
            dataset: None,
            design: DesignFlags::for_model(&config.model_config()),
            training: None,
            grid: None,
            test: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A trained model together with its manifest.
pub struct RunOutcome<F> {
    pub model: SeqRecModel<F>,
    pub manifest: RunManifest,
    pub test: MetricReport,
}

/// Split, train (or grid search when the config has a grid) and evaluate
/// on test.
pub fn run<F: Real>(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<RunOutcome<F>> {
    let item_count = corpus.items.len();
    cfg.validate(item_count)?;
    let split = split_leave_one_out(&corpus.sequences, cfg.dataset.max_seq_len);
    let mut manifest = RunManifest::new(if cfg.grid.is_some() { "grid" } else { "train" }, cfg);
    manifest.dataset = Some(DatasetSummary::new(&cfg.dataset.name, corpus, &split));
    let train_cfg = TrainConfig { eval_k: cfg.eval.k, ..cfg.train.clone() };
    let (model, test) = match &cfg.grid {
        Some(grid) => {
            let out = grid_search::<F>(&cfg.model_config(), &train_cfg, grid, &split, item_count)?;
            manifest.training = Some(out.report);
            manifest.grid = Some(out.rows);
            (out.model, out.test)
        }
        None => {
            let mut model = SeqRecModel::<F>::new(cfg.model_config(), item_count, train_cfg.seed)?;
            let report = train(&mut model, &split, &train_cfg)?;
            manifest.training = Some(report);
            let (_, test) = evaluate(&model, &split.test, cfg.eval.k)?;
            (model, test)
        }
    };
    manifest.test = Some(test);
    Ok(RunOutcome { model, manifest, test })
}

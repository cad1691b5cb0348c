//! Run configuration: a TOML file with one section per pipeline stage,
//! dotted `key=value` overrides and path resolution relative to the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bayestrans_core::metrics::Convention;
use bayestrans_core::scorers::{RelationSet, ScorerKind};
use bayestrans_core::train::{Prediction, TrainConfig};
use bayestrans_core::variational::{ModelConfig, PosteriorMode};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Standard deviation used for the deterministic (vanilla) variant.
pub const VANILLA_SIGMA: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub prior: PriorSection,
    pub prior_train: PriorTrainSection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub relations: Vec<String>,
    /// Relation treated as "no relation" by the matres convention; empty for none.
    pub no_relation: String,
    pub train: String,
    pub dev: String,
    pub test: String,
    /// Precomputed embedding file; empty selects a lookup table.
    pub embeddings: String,
    pub lookup_dim: usize,
    pub lookup_trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub scorer: String,
    pub relation_dim: usize,
    pub latent_dim: usize,
    /// 0 selects twice the embedding dimension.
    pub hidden_dim: usize,
    pub dropout: f64,
    /// `bayesian` or `vanilla` (no regularizer, posterior std pinned near 0).
    pub variant: String,
    /// 0 selects twice the latent dimension.
    pub kernel_scale: f64,
    pub init_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub encoder_learning_rate: f64,
    pub anneal_start: f64,
    pub anneal_end: f64,
    pub mc_samples: usize,
    pub convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// `standard` or `file`.
    pub source: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorTrainSection {
    pub kg_triples: String,
    pub node_features: String,
    pub augment: bool,
    pub similarity_threshold: f64,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Relation-set name to knowledge-graph relation name.
    pub mapping: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: String,
    /// `mean` or `mc`.
    pub prediction: String,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub passes: usize,
    /// Class left out of the simplex plot; empty disables the plot.
    pub drop_class: String,
    pub svg: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            relations: ["Before", "After", "Equal", "Vague"].map(String::from).to_vec(),
            no_relation: "Vague".into(),
            train: "train.tsv".into(),
            dev: "dev.tsv".into(),
            test: "test.tsv".into(),
            embeddings: "embeddings.txt".into(),
            lookup_dim: 16,
            lookup_trainable: true,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            scorer: "mure".into(),
            relation_dim: 50,
            latent_dim: 200,
            hidden_dim: 0,
            dropout: 0.1,
            variant: "bayesian".into(),
            kernel_scale: 0.0,
            init_sigma: 0.1,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            encoder_learning_rate: t.encoder_learning_rate,
            anneal_start: t.anneal_start,
            anneal_end: t.anneal_end,
            mc_samples: t.mc_samples,
            convention: "matres".into(),
        }
    }
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            source: "standard".into(),
            path: "prior.txt".into(),
        }
    }
}

impl Default for PriorTrainSection {
    fn default() -> Self {
        Self {
            kg_triples: "kg_triples.tsv".into(),
            node_features: "node_features.txt".into(),
            augment: true,
            similarity_threshold: bayestrans_core::prior::DEFAULT_SIMILARITY_THRESHOLD,
            dim: 16,
            epochs: 200,
            learning_rate: 0.01,
            mapping: BTreeMap::new(),
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "test".into(),
            prediction: "mean".into(),
            mc_samples: 100,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            passes: 100,
            drop_class: "Equal".into(),
            svg: true,
        }
    }
}

/// Overlays `patch` onto `base`; every key of `patch` must already exist.
fn merge(base: &mut Table, patch: Table, prefix: &str) -> Result<()> {
    for (key, value) in patch {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(CliError::Config(format!("unknown configuration key {path}"))),
            (Some(Value::Table(b)), Value::Table(p)) if !is_free_map(&path) => merge(b, p, &path)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

/// Sections whose keys are user-defined rather than fixed.
fn is_free_map(path: &str) -> bool {
    path == "prior_train.mapping"
}

fn parse_override_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets a dotted key that must exist in `table`.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = &mut *table;
    for p in parents {
        node = match node.get_mut(*p) {
            Some(Value::Table(t)) => t,
            _ => return Err(CliError::Config(format!("unknown configuration key {key}"))),
        };
    }
    let free = is_free_map(&parents.join("."));
    match node.get_mut(*last) {
        Some(Value::Table(_)) => Err(CliError::Config(format!("{key} is a section, not a value"))),
        Some(slot) => {
            *slot = parse_override_value(raw.trim());
            Ok(())
        }
        None if free => {
            node.insert(last.to_string(), Value::String(raw.trim().to_string()));
            Ok(())
        }
        None => Err(CliError::Config(format!("unknown configuration key {key}"))),
    }
}

/// A configuration together with the directory its relative paths use.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub source: Option<PathBuf>,
}

impl ResolvedConfig {
    /// Reads `path` (or starts from defaults), then applies `overrides` in
    /// order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(RunConfig::default())
            .map_err(|e| CliError::Config(format!("cannot encode defaults: {e}")))?;
        let base_dir = match path {
            Some(p) => {
                let text = crate::formats::read_text(p)?;
                let mut file: Table =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                // a run manifest carries its configuration under [config]
                if file.contains_key(MANIFEST_RUN) {
                    file = match file.remove(MANIFEST_CONFIG) {
                        Some(Value::Table(t)) => t,
                        _ => return Err(CliError::Config(format!("{}: manifest without [config]", p.display()))),
                    };
                }
                merge(&mut table, file, "")?;
                p.parent().map(Path::to_path_buf).unwrap_or_default()
            }
            None => PathBuf::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(Self {
            config,
            base_dir,
            source: path.map(Path::to_path_buf),
        })
    }

    /// Resolves a configured path; empty stays empty.
    pub fn path(&self, p: &str) -> Option<PathBuf> {
        if p.is_empty() {
            None
        } else {
            Some(self.base_dir.join(p))
        }
    }

    /// The configuration with every file path made absolute.
    pub fn absolute(&self) -> RunConfig {
        let abs = |p: &mut String| {
            if let Some(path) = self.path(p) {
                *p = std::path::absolute(&path)
                    .unwrap_or(path)
                    .to_string_lossy()
                    .into_owned();
            }
        };
        let mut c = self.config.clone();
        for p in [
            &mut c.data.train,
            &mut c.data.dev,
            &mut c.data.test,
            &mut c.data.embeddings,
            &mut c.prior.path,
            &mut c.prior_train.kg_triples,
            &mut c.prior_train.node_features,
        ] {
            abs(p);
        }
        c
    }

    /// Manifest text: the invocation under `[run]` and the resolved,
    /// path-absolute configuration under `[config]`.
    pub fn manifest(&self, command: &str, overrides: &[String], out: &Path) -> String {
        let mut run = Table::new();
        let text = |s: &str| Value::String(s.to_string());
        run.insert("command".into(), text(command));
        run.insert("version".into(), text(env!("CARGO_PKG_VERSION")));
        run.insert("core_version".into(), text(bayestrans_core::VERSION));
        run.insert("seed".into(), Value::Integer(self.config.seed as i64));
        let source = self
            .source
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        run.insert("config_file".into(), text(&source));
        run.insert(
            "overrides".into(),
            Value::Array(overrides.iter().map(|o| text(o)).collect()),
        );
        run.insert("out".into(), text(&out.display().to_string()));
        let mut doc = Table::new();
        doc.insert(MANIFEST_RUN.into(), Value::Table(run));
        doc.insert(
            MANIFEST_CONFIG.into(),
            Value::try_from(self.absolute()).expect("configuration serializes"),
        );
        toml::to_string(&doc).expect("manifest serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.config).expect("configuration serializes")
    }
}

const MANIFEST_RUN: &str = "run";
const MANIFEST_CONFIG: &str = "config";

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.relset()?;
        self.scorer()?;
        self.convention()?;
        self.prediction()?;
        if !matches!(self.model.variant.as_str(), "bayesian" | "vanilla") {
            return Err(CliError::Config(format!(
                "model.variant must be bayesian or vanilla, got {}",
                self.model.variant
            )));
        }
        if !matches!(self.prior.source.as_str(), "standard" | "file") {
            return Err(CliError::Config(format!(
                "prior.source must be standard or file, got {}",
                self.prior.source
            )));
        }
        if self.model.relation_dim == 0 || self.model.latent_dim == 0 || self.data.lookup_dim == 0 {
            return Err(CliError::Config("dimensions must be positive".into()));
        }
        if !(self.train.learning_rate > 0.0 && self.train.encoder_learning_rate > 0.0) {
            return Err(CliError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn relset(&self) -> Result<RelationSet> {
        if let Some(bad) = self.data.relations.iter().find(|r| r.chars().any(char::is_whitespace)) {
            return Err(CliError::Config(format!("relation name {bad:?} contains whitespace")));
        }
        let none = (!self.data.no_relation.is_empty()).then_some(self.data.no_relation.as_str());
        Ok(RelationSet::new(&self.data.relations, none)?)
    }

    pub fn scorer(&self) -> Result<ScorerKind> {
        Ok(self.model.scorer.parse()?)
    }

    pub fn convention(&self) -> Result<Convention> {
        Ok(self.train.convention.parse()?)
    }

    pub fn prediction(&self) -> Result<Prediction> {
        match self.eval.prediction.as_str() {
            "mean" => Ok(Prediction::Mean),
            "mc" => Ok(Prediction::MonteCarlo {
                samples: self.eval.mc_samples,
                seed: self.seed,
            }),
            other => Err(CliError::Config(format!(
                "eval.prediction must be mean or mc, got {other}"
            ))),
        }
    }

    pub fn is_vanilla(&self) -> bool {
        self.model.variant == "vanilla"
    }

    /// Model configuration for embeddings of dimension `input_dim`.
    pub fn model_config(&self, input_dim: usize) -> Result<ModelConfig> {
        let mut mc = ModelConfig::new(
            self.relset()?,
            self.scorer()?,
            input_dim,
            self.model.relation_dim,
            self.model.latent_dim,
        );
        if self.model.hidden_dim > 0 {
            mc.hidden_dim = self.model.hidden_dim;
        }
        mc.dropout = self.model.dropout;
        mc.init_sigma = self.model.init_sigma;
        mc.kernel_scale = (self.model.kernel_scale > 0.0).then_some(self.model.kernel_scale);
        if self.is_vanilla() {
            mc.posterior = PosteriorMode::Pinned(VANILLA_SIGMA);
        }
        mc.validate()?;
        Ok(mc)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            encoder_learning_rate: t.encoder_learning_rate,
            anneal_start: t.anneal_start,
            anneal_end: t.anneal_end,
            mc_samples: t.mc_samples,
            regularize: !self.is_vanilla(),
            convention: self.convention()?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

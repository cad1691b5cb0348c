//! Dataset splits, the mini-batch training loop and evaluation.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encoder::{head_key, tail_key, EmbeddingProvider, EventPairInstance, LookupTable};
use crate::error::{config_err, invalid};
use crate::metrics::{compute_metrics, Convention, MetricsReport};
use crate::numerics::{ProbVector, SeededRng};
use crate::optim::{Adam, AdamConfig};
use crate::prior::PriorSpec;
use crate::scorers::RelationSet;
use crate::variational::{anneal_weight, batch_objective, AnnealSchedule, Block, Model, ModelConfig, ObjectiveOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            _ => Err(invalid!("unknown split {s}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub id: String,
    pub label: usize,
    pub text: Option<String>,
}

/// Labelled instance ids; embeddings are joined from a provider by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub items: Vec<LabeledPair>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, items: Vec<LabeledPair>) -> Result<Self> {
        if name == SplitName::Train && items.is_empty() {
            return Err(invalid!("training split is empty"));
        }
        let mut seen = BTreeSet::new();
        for it in &items {
            if !seen.insert(it.id.as_str()) {
                return Err(invalid!("duplicate instance id {} in {name} split", it.id));
            }
        }
        Ok(Self { name, items })
    }

    /// Parses `id \t label [\t text]` lines. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse(text: &str, name: SplitName, relset: &RelationSet) -> Result<Self> {
        let mut items = Vec::new();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let id = fields.next().unwrap_or_default().trim();
            let label = fields
                .next()
                .ok_or_else(|| invalid!("line {lineno}: expected id<TAB>label"))?
                .trim();
            if id.is_empty() {
                return Err(invalid!("line {lineno}: empty instance id"));
            }
            let label_idx = relset
                .index_of(label)
                .ok_or_else(|| invalid!("line {lineno}: unknown label {label:?}"))?;
            if !seen.insert(id.to_string()) {
                return Err(invalid!("line {lineno}: duplicate instance id {id}"));
            }
            items.push(LabeledPair {
                id: id.to_string(),
                label: label_idx,
                text: fields.next().map(|t| t.to_string()).filter(|t| !t.is_empty()),
            });
        }
        Self::new(name, items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn instances(&self, provider: &EmbeddingProvider) -> Result<Vec<EventPairInstance>> {
        self.items
            .iter()
            .map(|it| provider.instance(&it.id, it.label, it.text.as_deref()))
            .collect()
    }

    /// Every embedding key the split needs.
    pub fn keys(&self) -> Vec<String> {
        self.items
            .iter()
            .flat_map(|it| [head_key(&it.id), tail_key(&it.id)])
            .collect()
    }
}

/// How a predicted label is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    /// Predictive distribution at the posterior mean.
    Mean,
    /// Average of `samples` posterior-draw distributions.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the posterior network and parameter map.
    pub learning_rate: f64,
    /// Learning rate of the projection and trainable embeddings.
    pub encoder_learning_rate: f64,
    pub anneal_start: f64,
    pub anneal_end: f64,
    /// Monte Carlo samples per instance in the objective.
    pub mc_samples: usize,
    /// Weight the MMD term by the anneal schedule; off means `lambda = 0`.
    pub regularize: bool,
    pub convention: Convention,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            encoder_learning_rate: 1e-5,
            anneal_start: 1e-2,
            anneal_end: 2.0,
            mc_samples: 1,
            regularize: true,
            convention: Convention::Matres,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.mc_samples == 0 {
            return Err(config_err!("batch size and sample count must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.encoder_learning_rate > 0.0) {
            return Err(config_err!("learning rates must be positive"));
        }
        if !(self.anneal_start <= self.anneal_end && self.anneal_start >= 0.0) {
            return Err(config_err!("anneal schedule must satisfy 0 <= start <= end"));
        }
        Ok(())
    }

    pub fn anneal(&self) -> AnnealSchedule {
        AnnealSchedule {
            start: self.anneal_start,
            end: self.anneal_end,
            epochs: self.epochs.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub loss: f64,
    pub nll: f64,
    pub mmd: f64,
    pub dev_f1: f64,
}

/// Position of a named random stream when training finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub component: String,
    pub seed: u64,
    pub position: u128,
}

/// Best-dev model together with the training record.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Lookup-mode embeddings at the best epoch.
    pub lookup: Option<LookupTable>,
    pub anneal: AnnealSchedule,
    /// `None` when no epoch matched the initialization's dev F1.
    pub best_epoch: Option<usize>,
    pub best_dev_f1: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub rng: Vec<RngState>,
}

impl Checkpoint {
    /// Embedding provider for this checkpoint: its own lookup table when it
    /// has one, otherwise `external`.
    pub fn provider(&self, external: Option<&EmbeddingProvider>) -> Result<EmbeddingProvider> {
        match (&self.lookup, external) {
            (Some(l), _) => Ok(EmbeddingProvider::Lookup(l.clone())),
            (None, Some(p)) => Ok(p.clone()),
            (None, None) => Err(config_err!(
                "checkpoint has no embeddings; a precomputed provider is required"
            )),
        }
    }
}

pub fn predict_split(
    model: &Model,
    provider: &EmbeddingProvider,
    split: &DatasetSplit,
    mode: Prediction,
) -> Result<Vec<ProbVector>> {
    let instances = split.instances(provider)?;
    match mode {
        Prediction::Mean => instances.iter().map(|i| model.predict_mean(i)).collect(),
        Prediction::MonteCarlo { samples, seed } => {
            let mut rng = SeededRng::for_component(seed, "predict");
            instances
                .iter()
                .map(|i| model.predict_averaged(i, samples, &mut rng))
                .collect()
        }
    }
}

pub fn evaluate(
    model: &Model,
    provider: &EmbeddingProvider,
    split: &DatasetSplit,
    convention: Convention,
    mode: Prediction,
) -> Result<MetricsReport> {
    if split.is_empty() {
        return Err(invalid!("cannot evaluate an empty {} split", split.name));
    }
    let predicted: Vec<usize> = predict_split(model, provider, split, mode)?
        .iter()
        .map(|p| p.argmax())
        .collect();
    compute_metrics(&split.labels(), &predicted, &model.config().relset, convention)
}

/// Mini-batch optimizer state for one run.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    train_split: &'a DatasetSplit,
    dev_split: &'a DatasetSplit,
    prior: &'a PriorSpec,
    model: Model,
    provider: EmbeddingProvider,
    anneal: AnnealSchedule,
    groups: Vec<(core::ops::Range<usize>, f64)>,
    adam: Adam,
    table_adam: Option<Adam>,
    init_rng: SeededRng,
    shuffle_rng: SeededRng,
    sample_rng: SeededRng,
    order: Vec<usize>,
    epoch: usize,
    best: (Model, Option<LookupTable>, f64, Option<usize>),
    history: Vec<EpochRecord>,
}

/// Inputs are validated before training starts, so an invalid-value error
/// raised mid-epoch comes from the model state.
fn numeric_failure(e: Error, epoch: usize) -> Error {
    match e {
        Error::InvalidInput(detail) => Error::Divergence { epoch, detail },
        other => other,
    }
}

fn lookup_of(p: &EmbeddingProvider) -> Option<LookupTable> {
    match p {
        EmbeddingProvider::Lookup(l) => Some(l.clone()),
        EmbeddingProvider::Precomputed(_) => None,
    }
}

impl<'a> Trainer<'a> {
    pub fn new(
        model_config: ModelConfig,
        config: &'a TrainConfig,
        train_split: &'a DatasetSplit,
        dev_split: &'a DatasetSplit,
        provider: &EmbeddingProvider,
        prior: &'a PriorSpec,
    ) -> Result<Self> {
        config.validate()?;
        model_config.validate()?;
        if provider.dim() != model_config.input_dim {
            return Err(config_err!(
                "embeddings have dimension {}, model expects {}",
                provider.dim(),
                model_config.input_dim
            ));
        }
        if prior.dim() != model_config.latent_dim {
            return Err(config_err!(
                "prior has dimension {}, latent dimension is {}",
                prior.dim(),
                model_config.latent_dim
            ));
        }
        if train_split.is_empty() {
            return Err(invalid!("training split is empty"));
        }
        let mut init_rng = SeededRng::for_component(config.seed, "init");
        let model = Model::init(model_config, &mut init_rng)?;
        let layout = model.layout().clone();
        let groups = Block::ALL
            .iter()
            .map(|&b| {
                let lr = if b.is_encoder() {
                    config.encoder_learning_rate
                } else {
                    config.learning_rate
                };
                (layout.range(b), lr)
            })
            .collect();
        let table_adam = match provider {
            EmbeddingProvider::Lookup(l) if l.trainable() => Some(Adam::new(l.table().len(), AdamConfig::default())),
            _ => None,
        };
        let mut trainer = Self {
            config,
            train_split,
            dev_split,
            prior,
            best: (model.clone(), lookup_of(provider), 0.0, None),
            model,
            provider: provider.clone(),
            anneal: config.anneal(),
            groups,
            adam: Adam::new(layout.len(), AdamConfig::default()),
            table_adam,
            init_rng,
            shuffle_rng: SeededRng::for_component(config.seed, "shuffle"),
            sample_rng: SeededRng::for_component(config.seed, "sample"),
            order: (0..train_split.len()).collect(),
            epoch: 0,
            history: Vec::with_capacity(config.epochs),
        };
        trainer.best.2 = trainer.dev_f1()?;
        Ok(trainer)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    fn dev_f1(&self) -> Result<f64> {
        if self.dev_split.is_empty() {
            return Ok(0.0);
        }
        Ok(evaluate(
            &self.model,
            &self.provider,
            self.dev_split,
            self.config.convention,
            Prediction::Mean,
        )?
        .f1)
    }

    fn update_table(&mut self, batch: &[EventPairInstance], input_grads: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        let (Some(opt), EmbeddingProvider::Lookup(table)) = (self.table_adam.as_mut(), &mut self.provider) else {
            return Ok(());
        };
        let dim = self.model.config().input_dim;
        let mut grad = vec![0.0; table.table().len()];
        for (inst, (gh, gt)) in batch.iter().zip(input_grads) {
            for (key, g) in [(head_key(&inst.id), gh), (tail_key(&inst.id), gt)] {
                let row = table
                    .row_index(&key)
                    .ok_or_else(|| Error::NotFound(alloc::format!("embedding key {key}")))?;
                for (a, b) in grad[row * dim..(row + 1) * dim].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let mut values = table.table().to_vec();
        let all = 0..values.len();
        opt.step(&mut values, &grad, &[(all, self.config.encoder_learning_rate)])?;
        for row in 0..values.len() / dim {
            table.row_mut(row).copy_from_slice(&values[row * dim..(row + 1) * dim]);
        }
        Ok(())
    }

    /// Runs one epoch and the dev evaluation that follows it.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.epoch;
        let lambda = if self.config.regularize {
            anneal_weight(epoch, &self.anneal)?
        } else {
            0.0
        };
        self.shuffle_rng.shuffle(&mut self.order);
        let (mut loss_sum, mut nll_sum, mut mmd_sum) = (0.0, 0.0, 0.0);
        let order = self.order.clone();
        let batches = order.chunks(self.config.batch_size);
        let n_batches = batches.len() as f64;
        for chunk in batches {
            let batch: Vec<EventPairInstance> = chunk
                .iter()
                .map(|&i| {
                    let it = &self.train_split.items[i];
                    self.provider.instance(&it.id, it.label, None)
                })
                .collect::<Result<_>>()?;
            let opts = ObjectiveOptions {
                lambda,
                samples: self.config.mc_samples,
                train: true,
            };
            let obj = batch_objective(&self.model, &batch, self.prior, &opts, &mut self.sample_rng)
                .map_err(|e| numeric_failure(e, epoch))?;
            if !obj.loss.is_finite() || obj.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: alloc::format!("non-finite loss or gradient (loss = {})", obj.loss),
                });
            }
            loss_sum += obj.loss;
            nll_sum += obj.nll;
            mmd_sum += obj.mmd;
            self.adam.step(self.model.params_mut(), &obj.grad, &self.groups)?;
            self.update_table(&batch, &obj.input_grads)?;
            if self.model.params().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: alloc::string::String::from("non-finite parameters after update"),
                });
            }
        }
        let dev_f1 = self.dev_f1().map_err(|e| numeric_failure(e, epoch))?;
        if dev_f1 >= self.best.2 {
            self.best = (self.model.clone(), lookup_of(&self.provider), dev_f1, Some(epoch));
        }
        self.epoch += 1;
        self.history.push(EpochRecord {
            epoch,
            lambda,
            loss: loss_sum / n_batches,
            nll: nll_sum / n_batches,
            mmd: mmd_sum / n_batches,
            dev_f1,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(self) -> Checkpoint {
        let rng = [
            ("init", &self.init_rng),
            ("shuffle", &self.shuffle_rng),
            ("sample", &self.sample_rng),
        ]
        .iter()
        .map(|(name, r)| RngState {
            component: name.to_string(),
            seed: r.seed(),
            position: r.position(),
        })
        .collect();
        let (model, lookup, best_dev_f1, best_epoch) = self.best;
        Checkpoint {
            model,
            lookup,
            anneal: self.anneal,
            best_epoch,
            best_dev_f1,
            epochs_run: self.epoch,
            history: self.history,
            rng,
        }
    }
}

/// Mini-batch training of the annealed objective with two learning-rate
/// groups, keeping the model with the best dev F1. The initialization counts
/// as a candidate; ties go to the later epoch.
pub fn train(
    model_config: ModelConfig,
    config: &TrainConfig,
    train_split: &DatasetSplit,
    dev_split: &DatasetSplit,
    provider: &EmbeddingProvider,
    prior: &PriorSpec,
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(model_config, config, train_split, dev_split, provider, prior)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

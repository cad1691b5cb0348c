//! Synthetic translational task: `e_t = W*_r ⊙ e_h + t*_r + noise` with
//! hidden per-relation parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::{head_key, tail_key, EmbeddingProvider, EventPairInstance, PrecomputedEmbeddings};
use crate::error::invalid;
use crate::numerics::SeededRng;
use crate::scorers::RelationSet;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub instances: usize,
    pub dim: usize,
    pub relations: usize,
    /// Standard deviation of the additive tail noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            instances: 2000,
            dim: 16,
            relations: 4,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub relset: RelationSet,
    /// `W*_r` per relation.
    pub scaling: Vec<Vec<f64>>,
    /// `t*_r` per relation.
    pub translation: Vec<Vec<f64>>,
    pub embeddings: PrecomputedEmbeddings,
    /// `(instance id, label index)` in generation order.
    pub labels: Vec<(String, usize)>,
}

impl SyntheticTask {
    pub fn provider(&self) -> EmbeddingProvider {
        EmbeddingProvider::Precomputed(self.embeddings.clone())
    }

    pub fn instances(&self) -> Result<Vec<EventPairInstance>> {
        let provider = self.provider();
        self.labels
            .iter()
            .map(|(id, label)| provider.instance(id, *label, None))
            .collect()
    }

    /// Per relation, the generating parameters in raw layout order
    /// `[W*_r - 1; t*_r]`.
    pub fn true_relation_embeddings(&self) -> BTreeMap<String, Vec<f64>> {
        self.relset
            .names()
            .iter()
            .enumerate()
            .map(|(r, name)| {
                let mut v: Vec<f64> = self.scaling[r].iter().map(|w| w - 1.0).collect();
                v.extend(&self.translation[r]);
                (name.clone(), v)
            })
            .collect()
    }
}

/// Draws `W*_r ~ 1 + 0.5 N(0, I)`, `t*_r ~ N(0, I)`, heads `e_h ~ N(0, I)`
/// and uniform labels. Relations are named `R0, R1, ...`.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticTask> {
    if config.instances == 0 || config.dim == 0 || config.relations < 2 {
        return Err(invalid!(
            "synthetic task needs instances, a dimension and at least two relations"
        ));
    }
    if config.noise.is_nan() || config.noise < 0.0 {
        return Err(invalid!("noise must be non-negative"));
    }
    let names: Vec<String> = (0..config.relations).map(|r| format!("R{r}")).collect();
    let relset = RelationSet::new(&names, None)?;
    let mut rng = SeededRng::for_component(config.seed, "synthetic");
    let d = config.dim;
    let scaling: Vec<Vec<f64>> = (0..config.relations)
        .map(|_| (0..d).map(|_| 1.0 + 0.5 * rng.standard_normal()).collect())
        .collect();
    let translation: Vec<Vec<f64>> = (0..config.relations)
        .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
        .collect();
    let mut embeddings = PrecomputedEmbeddings::new(d)?;
    let mut labels = Vec::with_capacity(config.instances);
    for i in 0..config.instances {
        let id = format!("syn{i}");
        let r = rng.index(config.relations);
        let head: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let tail = (0..d)
            .map(|j| scaling[r][j] * head[j] + translation[r][j] + config.noise * rng.standard_normal())
            .collect();
        embeddings.insert(head_key(&id), head)?;
        embeddings.insert(tail_key(&id), tail)?;
        labels.push((id, r));
    }
    Ok(SyntheticTask {
        relset,
        scaling,
        translation,
        embeddings,
        labels,
    })
}

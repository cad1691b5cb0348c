//! Posterior diagnostics: Monte Carlo predictive sampling, the
//! entropy / mutual-information uncertainty split, barycentric simplex
//! coordinates and latent activity scores.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::EventPairInstance;
use crate::error::{config_err, invalid};
use crate::numerics::{entropy, ProbVector, SeededRng};
use crate::scorers::RelationSet;
use crate::variational::Model;
use crate::Result;

/// Corners of the plotted 2-simplex.
pub const SIMPLEX_CORNERS: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.5, 0.866_025_403_784_438_6)];

/// Predictive distributions of repeated posterior draws for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct McPredictions {
    pub id: String,
    pub rows: Vec<ProbVector>,
    pub seed: u64,
}

impl McPredictions {
    /// Running mean of the rows; exact when every row is identical.
    pub fn mean(&self) -> Vec<f64> {
        running_mean(self.rows.iter().map(|r| &r[..]))
    }
}

fn running_mean<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut mean: Vec<f64> = Vec::new();
    for (n, row) in rows.enumerate() {
        if n == 0 {
            mean = row.to_vec();
        } else {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += (v - *m) / (n + 1) as f64;
            }
        }
    }
    mean
}

/// `n` posterior draws for `inst`, each projected to relation parameters
/// and scored.
pub fn mc_predict(model: &Model, inst: &EventPairInstance, n: usize, rng: &mut SeededRng) -> Result<McPredictions> {
    if n == 0 {
        return Err(invalid!("need at least one forward pass"));
    }
    let seed = rng.seed();
    let rows = (0..n)
        .map(|_| model.predict_sampled(inst, rng))
        .collect::<Result<_>>()?;
    Ok(McPredictions {
        id: inst.id.clone(),
        rows,
        seed,
    })
}

/// Total and model uncertainty in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uncertainty {
    /// Entropy of the mean predictive distribution.
    pub total: f64,
    /// Mutual information: total minus the mean per-row entropy.
    pub model: f64,
}

pub fn uncertainty(preds: &McPredictions) -> Result<Uncertainty> {
    if preds.rows.len() < 2 {
        return Err(invalid!("uncertainty needs at least two forward passes"));
    }
    let total = entropy(&preds.mean());
    let mut mean_entropy = 0.0;
    for (n, row) in preds.rows.iter().enumerate() {
        mean_entropy += (entropy(row) - mean_entropy) / (n + 1) as f64;
    }
    Ok(Uncertainty {
        total,
        model: (total - mean_entropy).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexRow {
    pub pass: usize,
    /// Renormalized masses of the kept classes.
    pub weights: [f64; 3],
    pub x: f64,
    pub y: f64,
    /// Argmax over the full distribution, as a relation index.
    pub argmax: usize,
}

/// Kept class indices after dropping `drop_class`.
pub fn simplex_classes(relset: &RelationSet, drop_class: &str) -> Result<[usize; 3]> {
    let dropped = relset
        .index_of(drop_class)
        .ok_or_else(|| config_err!("relation {drop_class} is not in the relation set"))?;
    let kept: Vec<usize> = (0..relset.len()).filter(|&i| i != dropped).collect();
    kept.try_into()
        .map_err(|k: Vec<usize>| config_err!("simplex needs 3 remaining classes, got {}", k.len()))
}

/// Barycentric plot coordinates of `weights` (which sum to 1).
pub fn barycentric(weights: [f64; 3]) -> (f64, f64) {
    let mut x = 0.0;
    let mut y = 0.0;
    for (w, (cx, cy)) in weights.iter().zip(SIMPLEX_CORNERS) {
        x += w * cx;
        y += w * cy;
    }
    (x, y)
}

/// Drops one class, renormalizes the remaining three and maps each row to
/// the plane. A row with no mass on the kept classes lands on the centroid.
pub fn simplex_export(preds: &McPredictions, relset: &RelationSet, drop_class: &str) -> Result<Vec<SimplexRow>> {
    let kept = simplex_classes(relset, drop_class)?;
    preds
        .rows
        .iter()
        .enumerate()
        .map(|(pass, row)| {
            if row.len() != relset.len() {
                return Err(invalid!(
                    "prediction row has {} classes, relation set has {}",
                    row.len(),
                    relset.len()
                ));
            }
            let mass: f64 = kept.iter().map(|&k| row[k]).sum();
            let weights = if mass > 0.0 {
                kept.map(|k| row[k] / mass)
            } else {
                [1.0 / 3.0; 3]
            };
            let (x, y) = barycentric(weights);
            Ok(SimplexRow {
                pass,
                weights,
                x,
                y,
                argmax: row.argmax(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityReport {
    /// Per-dimension variance of the posterior-mean relation parameters.
    pub values: Vec<f64>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

/// Variance across instances (population, Welford) of every coordinate of
/// the relation parameters at the posterior mean.
pub fn activity_scores(model: &Model, instances: &[EventPairInstance]) -> Result<ActivityReport> {
    if instances.len() < 2 {
        return Err(invalid!("activity needs at least two instances"));
    }
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    for (n, inst) in instances.iter().enumerate() {
        let lambda = model.posterior_mean_params(inst)?.to_raw();
        if n == 0 {
            mean = vec![0.0; lambda.len()];
            m2 = vec![0.0; lambda.len()];
        }
        for ((m, s), v) in mean.iter_mut().zip(m2.iter_mut()).zip(&lambda) {
            let delta = v - *m;
            *m += delta / (n + 1) as f64;
            *s += delta * (v - *m);
        }
    }
    let values: Vec<f64> = m2.iter().map(|s| (s / instances.len() as f64).max(0.0)).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(ActivityReport {
        min: sorted[0],
        max: sorted[k - 1],
        median,
        mean: values.iter().sum::<f64>() / k as f64,
        values,
    })
}

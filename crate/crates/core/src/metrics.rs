//! Classification metrics: dataset-convention precision/recall/F1, micro-F1,
//! per-class table and confusion matrix. All scores are percentages.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{config_err, invalid};
use crate::scorers::RelationSet;
use crate::{Error, Result};

/// How the headline precision/recall/F1 are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// The no-relation class is excluded from both predicted and gold
    /// counts.
    Matres,
    /// Micro average over every class.
    Micro,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Matres => "matres",
            Convention::Micro => "micro",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matres" => Ok(Convention::Matres),
            "micro" => Ok(Convention::Micro),
            _ => Err(config_err!("unknown metric convention {s}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    /// Set when a zero denominator forced a 0 entry.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub convention: Convention,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub micro_f1: f64,
    pub classes: Vec<ClassRow>,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// `100 * num / den`, or 0 with `flag` set when `den = 0`.
fn percent(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(
    gold: &[usize],
    predicted: &[usize],
    relset: &RelationSet,
    convention: Convention,
) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(invalid!("no instances to score"));
    }
    if gold.len() != predicted.len() {
        return Err(invalid!(
            "{} gold labels but {} predictions",
            gold.len(),
            predicted.len()
        ));
    }
    let k = relset.len();
    if gold.iter().chain(predicted).any(|&l| l >= k) {
        return Err(invalid!("label index outside the relation set"));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&g, &p) in gold.iter().zip(predicted) {
        confusion[g][p] += 1;
    }
    let mut warnings = Vec::new();
    let classes: Vec<ClassRow> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let gold_c: usize = confusion[c].iter().sum();
            let pred_c: usize = confusion.iter().map(|row| row[c]).sum();
            let mut flagged = false;
            let precision = percent(tp, pred_c, &mut flagged);
            let recall = percent(tp, gold_c, &mut flagged);
            if flagged {
                warnings.push(format!(
                    "class {} has a zero denominator; reported as 0",
                    relset.name(c)
                ));
            }
            ClassRow {
                name: String::from(relset.name(c)),
                precision,
                recall,
                f1: harmonic(precision, recall),
                gold: gold_c,
                predicted: pred_c,
                flagged,
            }
        })
        .collect();

    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let micro_f1 = 100.0 * correct as f64 / gold.len() as f64;
    let (precision, recall, f1) = match (convention, relset.no_relation()) {
        (Convention::Matres, Some(none)) => {
            let mut flag = false;
            let correct_rel = (0..k).filter(|&c| c != none).map(|c| confusion[c][c]).sum();
            let pred_rel = predicted.iter().filter(|&&p| p != none).count();
            let gold_rel = gold.iter().filter(|&&g| g != none).count();
            let p = percent(correct_rel, pred_rel, &mut flag);
            let r = percent(correct_rel, gold_rel, &mut flag);
            if flag {
                warnings.push(String::from(
                    "no relation-bearing predictions or gold labels; reported as 0",
                ));
            }
            (p, r, harmonic(p, r))
        }
        _ => (micro_f1, micro_f1, micro_f1),
    };
    Ok(MetricsReport {
        convention,
        precision,
        recall,
        f1,
        micro_f1,
        classes,
        confusion,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const B: usize = 0;
    const A: usize = 1;
    const E: usize = 2;
    const V: usize = 3;

    #[test]
    fn six_instance_hand_count() {
        let gold = [B, B, A, V, E, V];
        let pred = [B, A, A, B, V, A];
        let r = compute_metrics(&gold, &pred, &RelationSet::matres(), Convention::Matres).unwrap();
        // relation-bearing predictions: 5, of which correct: 2; gold relation-bearing: 4
        assert_abs_diff_eq!(r.precision, 40.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.recall, 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.f1, 4000.0 / 90.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.micro_f1, 100.0 / 3.0, epsilon = 1e-9);
        let before = &r.classes[B];
        assert_eq!((before.precision, before.recall), (50.0, 50.0));
        let after = &r.classes[A];
        assert_abs_diff_eq!(after.precision, 100.0 / 3.0, epsilon = 1e-9);
        assert_eq!(after.recall, 100.0);
        assert_abs_diff_eq!(after.f1, 50.0, epsilon = 1e-9);
        let equal = &r.classes[E];
        assert_eq!((equal.precision, equal.recall, equal.f1), (0.0, 0.0, 0.0));
        assert!(equal.flagged);
        assert!(!r.classes[V].flagged);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), r.classes[c].gold);
        }
        let micro = compute_metrics(&gold, &pred, &RelationSet::matres(), Convention::Micro).unwrap();
        assert_abs_diff_eq!(micro.f1, 100.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn perfect_and_all_vague() {
        let gold = [B, A, E, V];
        for conv in [Convention::Matres, Convention::Micro] {
            let r = compute_metrics(&gold, &gold, &RelationSet::matres(), conv).unwrap();
            assert_eq!((r.precision, r.recall, r.f1, r.micro_f1), (100.0, 100.0, 100.0, 100.0));
        }
        let r = compute_metrics(&gold, &[V; 4], &RelationSet::matres(), Convention::Matres).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        let rs = RelationSet::matres();
        assert!(compute_metrics(&[], &[], &rs, Convention::Micro).is_err());
        assert!(compute_metrics(&[0], &[0, 1], &rs, Convention::Micro).is_err());
        assert!(compute_metrics(&[4], &[0], &rs, Convention::Micro).is_err());
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (gold, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let rs = RelationSet::matres();
            let r = compute_metrics(&gold, &pred, &rs, Convention::Matres).unwrap();
            let acc = 100.0 * pairs.iter().filter(|(g, p)| g == p).count() as f64 / pairs.len() as f64;
            prop_assert!((r.micro_f1 - acc).abs() < 1e-9);
            for v in [r.precision, r.recall, r.f1, r.micro_f1] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            // gold-Vague / predicted-Vague instances do not move the headline numbers
            let mut g2 = gold.clone();
            let mut p2 = pred.clone();
            g2.push(V);
            p2.push(V);
            let r2 = compute_metrics(&g2, &p2, &rs, Convention::Matres).unwrap();
            prop_assert_eq!((r.precision, r.recall, r.f1), (r2.precision, r2.recall, r2.f1));
        }
    }
}

//! Subject-level cross-validation folds stratified by baseline age.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.get(subject).copied()
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Row indices whose subject is (or is not, with `complement`) in `fold`.
    pub fn rows(&self, cohort: &Cohort, fold: usize, complement: bool) -> Vec<usize> {
        cohort
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                self.fold_of(&r.subject_id)
                    .is_some_and(|f| (f == fold) != complement)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sorts subjects by baseline age (ties by id) and deals them round-robin into
/// `k` folds starting from a seeded offset. All visits follow their subject.
pub fn stratified_subject_folds(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k}")));
    }
    let baseline = cohort.baseline_rows();
    if baseline.len() < k {
        return Err(invalid(format!(
            "{} subjects cannot fill {k} folds",
            baseline.len()
        )));
    }
    let mut subjects: Vec<(&str, f64)> = baseline
        .iter()
        .map(|(&s, &i)| (s, cohort.rows()[i].age))
        .collect();
    subjects.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..k);
    let folds = subjects
        .iter()
        .enumerate()
        .map(|(j, (s, _))| (s.to_string(), (offset + j) % k))
        .collect();
    Ok(FoldAssignment { k, folds })
}

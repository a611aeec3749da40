//! Brain-age gap: predicted minus chronological age, aggregated per group and over time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::ols_slope;
use super::ridge::RidgeReadout;
use crate::cohort::{Cohort, Group};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub subject_id: String,
    pub visit_index: u32,
    pub visit_time: f64,
    pub group: Group,
    pub predicted_age: f64,
    pub chronological_age: f64,
    pub bag: f64,
}

/// Builds records for `rows` of `cohort` from per-row predictions.
pub fn bag_records_from_predictions(
    predictions: &[f64],
    cohort: &Cohort,
    rows: &[usize],
) -> Result<Vec<BagRecord>> {
    if predictions.len() != rows.len() {
        return Err(invalid(format!(
            "{} predictions for {} rows",
            predictions.len(),
            rows.len()
        )));
    }
    rows.iter()
        .zip(predictions)
        .map(|(&i, &p)| {
            let r = &cohort.rows()[i];
            if !p.is_finite() {
                return Err(invalid(format!("non-finite prediction for row {i}")));
            }
            Ok(BagRecord {
                subject_id: r.subject_id.clone(),
                visit_index: r.visit_index,
                visit_time: r.visit_time,
                group: r.group,
                predicted_age: p,
                chronological_age: r.age,
                bag: p - r.age,
            })
        })
        .collect()
}

/// Records from a ridge readout applied to the rows' representations.
///
/// The readout is expected to have been fitted on healthy controls only.
pub fn bag_records<T: Scalar>(
    readout: &RidgeReadout<T>,
    embeddings: &Matrix<T>,
    cohort: &Cohort,
    rows: &[usize],
) -> Result<Vec<BagRecord>> {
    let preds: Vec<f64> = readout
        .predict(embeddings)?
        .into_iter()
        .map(Scalar::as_f64)
        .collect();
    bag_records_from_predictions(&preds, cohort, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BagSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupBagStats {
    pub groups: BTreeMap<Group, BagSummary>,
    /// Groups with no records.
    pub omitted: Vec<Group>,
}

pub fn group_bag_stats(records: &[BagRecord]) -> GroupBagStats {
    let mut out = GroupBagStats::default();
    for g in Group::ALL {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.group == g)
            .map(|r| r.bag)
            .collect();
        if v.is_empty() {
            out.omitted.push(g);
            continue;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n).sqrt();
        out.groups.insert(
            g,
            BagSummary {
                mean,
                std,
                n: v.len(),
            },
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LongitudinalSlopes {
    /// Mean per-subject OLS slope of BAG on visit time (years/year).
    pub slopes: BTreeMap<Group, f64>,
    pub subjects: BTreeMap<Group, usize>,
    /// Groups without any subject reaching the visit threshold.
    pub omitted: Vec<Group>,
}

pub fn longitudinal_bag_slopes(records: &[BagRecord], min_visits: usize) -> LongitudinalSlopes {
    let mut by_subject: BTreeMap<&str, Vec<&BagRecord>> = BTreeMap::new();
    for r in records {
        by_subject.entry(r.subject_id.as_str()).or_default().push(r);
    }
    let mut per_group: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    for visits in by_subject.values() {
        if visits.len() < min_visits.max(2) {
            continue;
        }
        let t: Vec<f64> = visits.iter().map(|r| r.visit_time).collect();
        let b: Vec<f64> = visits.iter().map(|r| r.bag).collect();
        if let Ok(s) = ols_slope(&t, &b) {
            per_group.entry(visits[0].group).or_default().push(s);
        }
    }
    let mut out = LongitudinalSlopes::default();
    for g in Group::ALL {
        match per_group.get(&g) {
            Some(s) if !s.is_empty() => {
                out.slopes.insert(g, s.iter().sum::<f64>() / s.len() as f64);
                out.subjects.insert(g, s.len());
            }
            _ => out.omitted.push(g),
        }
    }
    out
}

//! Synthetic multi-site cohorts with a site confound and accelerated aging.
//!
//! Per subject: baseline age `y ~ U[lo, hi]`, a site drawn uniformly and a
//! diagnostic group drawn from `group_fractions`. At visit `v` (time
//! `t = v * visit_spacing`):
//!
//! ```text
//! effective age  y* = y + t + offset(group) + rate(group) * t
//! features       x  = M phi(y*) + beta * c_site + noise
//! phi(a)            = [a/m, (a/m)^2, sin(a/m), cos(a/m)],  m = (lo + hi) / 2
//! ```
//!
//! `M` (p x 4) and the unit site vectors `c_site` are drawn once per cohort.
//! The recorded label is the chronological age `y + t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRow, Group};
use crate::error::{invalid, Result};
use crate::linalg::{norm, Matrix};

const SUBJECT_STREAM: u64 = 0x00c0_ffee_d00d_f00d;

/// Baseline brain-age offset (years) and yearly progression (years/year) per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseOffsets {
    /// Indexed HC, sMCI, pMCI, AD.
    pub baseline: [f64; 4],
    pub progression: [f64; 4],
}

impl Default for DiseaseOffsets {
    fn default() -> Self {
        Self {
            baseline: [0.0, 0.5, 2.5, 5.0],
            progression: [0.0, 0.0, 0.8, 1.0],
        }
    }
}

impl DiseaseOffsets {
    pub fn none() -> Self {
        Self {
            baseline: [0.0; 4],
            progression: [0.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_sites: usize,
    pub age_range: [f64; 2],
    pub feature_dim: usize,
    /// `beta`: scale of the additive per-site unit vector.
    pub site_effect_strength: f64,
    pub noise_std: f64,
    /// Fractions of subjects in HC, sMCI, pMCI, AD.
    pub group_fractions: [f64; 4],
    pub disease_offsets: DiseaseOffsets,
    pub visits_per_subject: usize,
    pub visit_spacing: f64,
    /// Share of sites held out as never-seen-in-training (rounded up).
    pub external_site_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 5000,
            n_sites: 10,
            age_range: [20.0, 80.0],
            feature_dim: 128,
            site_effect_strength: 1.0,
            noise_std: 1.25,
            group_fractions: [0.36, 0.28, 0.13, 0.23],
            disease_offsets: DiseaseOffsets::default(),
            visits_per_subject: 1,
            visit_spacing: 1.0,
            external_site_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Healthy-population benchmark: every subject is a control.
    pub fn healthy() -> Self {
        Self {
            group_fractions: [1.0, 0.0, 0.0, 0.0],
            ..Self::default()
        }
    }

    /// Clinical benchmark with follow-up visits.
    pub fn clinical() -> Self {
        Self {
            visits_per_subject: 4,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(invalid("n_subjects must be positive"));
        }
        if self.n_sites == 0 {
            return Err(invalid("n_sites must be positive"));
        }
        let [lo, hi] = self.age_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!(
                "age range [{lo}, {hi}] must satisfy lo < hi"
            )));
        }
        if lo + hi == 0.0 {
            return Err(invalid("age range midpoint must be nonzero"));
        }
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim must be positive"));
        }
        if !(self.site_effect_strength >= 0.0 && self.site_effect_strength.is_finite()) {
            return Err(invalid("site_effect_strength must be non-negative"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std must be non-negative"));
        }
        if self.group_fractions.iter().any(|&f| !(f >= 0.0)) {
            return Err(invalid("group fractions must be non-negative"));
        }
        let total: f64 = self.group_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "group fractions sum to {total}, expected 1"
            )));
        }
        let offsets = self
            .disease_offsets
            .baseline
            .iter()
            .chain(&self.disease_offsets.progression);
        if offsets.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("disease offsets must be finite"));
        }
        if self.visits_per_subject == 0 {
            return Err(invalid("visits_per_subject must be at least 1"));
        }
        if !(self.visit_spacing >= 0.0 && self.visit_spacing.is_finite()) {
            return Err(invalid("visit_spacing must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.external_site_fraction) {
            return Err(invalid("external_site_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn site_names(&self) -> Vec<String> {
        let width = (self.n_sites.saturating_sub(1)).to_string().len().max(2);
        (0..self.n_sites)
            .map(|s| format!("site{s:0width$}"))
            .collect()
    }

    /// The last `ceil(fraction * n_sites)` sites.
    pub fn external_sites(&self) -> Vec<String> {
        let k = (self.external_site_fraction * self.n_sites as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize;
        let names = self.site_names();
        names[self.n_sites - k.min(self.n_sites)..].to_vec()
    }

    fn midpoint(&self) -> f64 {
        0.5 * (self.age_range[0] + self.age_range[1])
    }
}

/// Age code fed through the mixing matrix.
pub fn age_code(age: f64, midpoint: f64) -> [f64; 4] {
    let a = age / midpoint;
    [a, a * a, a.sin(), a.cos()]
}

/// Generated cohort plus quantities not recorded in the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    /// Effective (biological) age per row.
    pub effective_age: Vec<f64>,
    pub mixing: Matrix<f64>,
    pub site_vectors: Vec<Vec<f64>>,
}

pub fn generate_cohort(spec: &SyntheticSpec) -> Result<Cohort> {
    Ok(generate_cohort_with_truth(spec)?.cohort)
}

pub fn generate_cohort_with_truth(spec: &SyntheticSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let p = spec.feature_dim;
    let mut structure = ChaCha8Rng::seed_from_u64(spec.seed);
    let mixing = Matrix::from_vec(
        p,
        4,
        (0..p * 4)
            .map(|_| StandardNormal.sample(&mut structure))
            .collect(),
    )?;
    let site_vectors: Vec<Vec<f64>> = (0..spec.n_sites)
        .map(|_| loop {
            let v: Vec<f64> = (0..p)
                .map(|_| StandardNormal.sample(&mut structure))
                .collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect();

    let sites = spec.site_names();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SUBJECT_STREAM);
    let mid = spec.midpoint();
    let [lo, hi] = spec.age_range;
    let id_width = spec.n_subjects.to_string().len().max(5);

    let mut rows = Vec::with_capacity(spec.n_subjects * spec.visits_per_subject);
    let mut effective_age = Vec::with_capacity(rows.capacity());
    for subject in 0..spec.n_subjects {
        let age0 = rng.random_range(lo..hi);
        let site = rng.random_range(0..spec.n_sites);
        let group = draw_group(&spec.group_fractions, rng.random::<f64>());
        let g = group.index();
        for v in 0..spec.visits_per_subject {
            let t = v as f64 * spec.visit_spacing;
            let effective = age0
                + t
                + spec.disease_offsets.baseline[g]
                + spec.disease_offsets.progression[g] * t;
            let code = age_code(effective, mid);
            let features = (0..p)
                .map(|j| {
                    let signal: f64 = (0..4).map(|c| mixing[(j, c)] * code[c]).sum();
                    let eps = if spec.noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    signal + spec.site_effect_strength * site_vectors[site][j] + eps
                })
                .collect();
            rows.push(CohortRow {
                subject_id: format!("sub-{subject:0id_width$}"),
                visit_index: v as u32,
                visit_time: t,
                site: sites[site].clone(),
                age: age0 + t,
                group,
                features,
            });
            effective_age.push(effective);
        }
    }
    Ok(SyntheticCohort {
        cohort: Cohort::new(rows)?,
        effective_age,
        mixing,
        site_vectors,
    })
}

fn draw_group(fractions: &[f64; 4], u: f64) -> Group {
    let mut acc = 0.0;
    for (g, &f) in Group::ALL.iter().zip(fractions) {
        acc += f;
        if u < acc {
            return *g;
        }
    }
    // rounding left u above the cumulative sum: last group with mass
    Group::ALL
        .iter()
        .zip(fractions)
        .rev()
        .find(|(_, &f)| f > 0.0)
        .map(|(g, _)| *g)
        .unwrap_or(Group::Hc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_subjects: 200,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(a, generate_cohort(&small().with_seed(1)).unwrap());
    }

    #[test]
    fn shapes_and_ranges() {
        let spec = SyntheticSpec {
            visits_per_subject: 3,
            ..small()
        };
        let c = generate_cohort(&spec).unwrap();
        assert_eq!(c.len(), 600);
        assert_eq!(c.feature_dim(), 128);
        assert_eq!(c.subjects().len(), 200);
        for r in c.rows() {
            let base = r.age - r.visit_time;
            assert!((20.0..80.0).contains(&base));
            assert_eq!(r.visit_time, r.visit_index as f64);
        }
    }

    #[test]
    fn noiseless_siteless_features_depend_on_age_only() {
        let spec = SyntheticSpec {
            site_effect_strength: 0.0,
            noise_std: 0.0,
            group_fractions: [1.0, 0.0, 0.0, 0.0],
            ..small()
        };
        let s = generate_cohort_with_truth(&spec).unwrap();
        for r in s.cohort.rows() {
            let code = age_code(r.age, 50.0);
            for (j, &f) in r.features.iter().enumerate() {
                let expect: f64 = (0..4).map(|c| s.mixing[(j, c)] * code[c]).sum();
                assert_eq!(f, expect);
            }
        }
    }

    #[test]
    fn disease_offsets_hold_by_construction() {
        let spec = SyntheticSpec {
            visits_per_subject: 4,
            n_subjects: 400,
            ..SyntheticSpec::default()
        };
        let s = generate_cohort_with_truth(&spec).unwrap();
        for g in Group::ALL {
            let idx: Vec<usize> = (0..s.cohort.len())
                .filter(|&i| s.cohort.rows()[i].group == g)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let n = idx.len() as f64;
            let gap = idx
                .iter()
                .map(|&i| s.effective_age[i] - s.cohort.rows()[i].age)
                .sum::<f64>()
                / n;
            let t = idx
                .iter()
                .map(|&i| s.cohort.rows()[i].visit_time)
                .sum::<f64>()
                / n;
            let expect = spec.disease_offsets.baseline[g.index()]
                + spec.disease_offsets.progression[g.index()] * t;
            assert!((gap - expect).abs() < 1e-9, "{g}: {gap} vs {expect}");
        }
    }

    #[test]
    fn group_fractions_respected_roughly() {
        let c = generate_cohort(&SyntheticSpec::default()).unwrap();
        let counts = c.group_counts();
        for (g, f) in Group::ALL
            .iter()
            .zip(SyntheticSpec::default().group_fractions)
        {
            let share = counts.get(g).copied().unwrap_or(0) as f64 / 5000.0;
            assert!((share - f).abs() < 0.03, "{g}: {share}");
        }
    }

    #[test]
    fn external_sites_round_up() {
        let spec = SyntheticSpec::default();
        assert_eq!(spec.external_sites(), vec!["site08", "site09"]);
        let spec = SyntheticSpec {
            n_sites: 7,
            ..SyntheticSpec::default()
        };
        assert_eq!(spec.external_sites(), vec!["site05", "site06"]);
        let spec = SyntheticSpec {
            external_site_fraction: 0.0,
            ..SyntheticSpec::default()
        };
        assert!(spec.external_sites().is_empty());
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            SyntheticSpec {
                age_range: [50.0, 40.0],
                ..small()
            },
            SyntheticSpec {
                group_fractions: [0.5, 0.5, 0.5, 0.0],
                ..small()
            },
            SyntheticSpec {
                noise_std: -1.0,
                ..small()
            },
            SyntheticSpec {
                visits_per_subject: 0,
                ..small()
            },
            SyntheticSpec {
                n_sites: 0,
                ..small()
            },
        ];
        for spec in bad {
            assert!(generate_cohort(&spec).is_err(), "{spec:?}");
        }
    }
}

use serde::{Deserialize, Serialize};

use super::bag::{GroupBagStats, LongitudinalSlopes};
use super::metrics::challenge_score;
use crate::error::{invalid, Result};

/// Every metric of one evaluated run. Metrics that could not be computed
/// (for example AUC without AD subjects) are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mae_internal: f64,
    pub mae_external: f64,
    /// On the internal test rows.
    pub r2: Option<f64>,
    pub site_bacc: f64,
    /// Chance level of the site probe (one over the number of probed sites).
    pub site_chance: f64,
    pub challenge_score: f64,
    pub challenge_degenerate: bool,
    pub bag: GroupBagStats,
    pub auc_hc_vs_ad: Option<f64>,
    pub longitudinal: LongitudinalSlopes,
    pub downstream_accuracy: Option<f64>,
    pub n_train: usize,
    pub n_internal: usize,
    pub n_external: usize,
}

impl EvalReport {
    /// Checks ranges and that the challenge score matches its inputs.
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("site_bacc", Some(self.site_bacc)),
            ("site_chance", Some(self.site_chance)),
            ("auc_hc_vs_ad", self.auc_hc_vs_ad),
            ("downstream_accuracy", self.downstream_accuracy),
        ];
        for (name, v) in fractions {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(format!("{name} = {v} is not a fraction")));
                }
            }
        }
        let expect = challenge_score(self.site_bacc, self.mae_external)?;
        if (expect.value - self.challenge_score).abs() > 1e-12 {
            return Err(invalid(format!(
                "challenge_score {} does not match site_bacc^0.3 * mae_external = {}",
                self.challenge_score, expect.value
            )));
        }
        Ok(())
    }
}

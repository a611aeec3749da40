//! Versioned JSON checkpoints of trained encoders.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::losses::LossConfig;
use crate::optim::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "kwcontrast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub loss: LossConfig<f64>,
    pub train: TrainConfig,
    pub seed: u64,
    pub params: EncoderParams<f64>,
    /// Split and evaluation settings of the run that produced the weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
}

impl Checkpoint {
    pub fn new(loss: LossConfig<f64>, train: TrainConfig, params: EncoderParams<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            loss,
            seed: train.seed,
            train,
            params,
            experiment: None,
        }
    }

    pub fn with_experiment(mut self, cfg: ExperimentConfig) -> Self {
        self.experiment = Some(cfg);
        self
    }

    fn check(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format '{}'",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.params
            .check_shapes()
            .map_err(|e| Error::Checkpoint(format!("inconsistent parameters: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.check()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

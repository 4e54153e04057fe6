//! TOML run configuration. Every section is optional; missing keys take
//! the library defaults.
//!
//! ```toml
//! [data]
//! manifest = "live.csv"
//! score_lo = 0.0
//! score_hi = 100.0
//!
//! [experiment]
//! repeats = 10
//! base_seed = 7
//!
//! [pipeline.loss]
//! kind = "huber"
//! huber_delta = 0.1
//!
//! [pipeline.train]
//! epochs = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentSettings, HarnessError, PipelineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub score_lo: f64,
    pub score_hi: f64,
    pub invert: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, score_lo: 0.0, score_hi: 1.0, invert: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub experiment: ExperimentSettings,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let c: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.data.score_hi > self.data.score_lo) {
            return Err(HarnessError::Config(format!("score range [{}, {}] is empty", self.data.score_lo, self.data.score_hi)));
        }
        if self.experiment.repeats == 0 {
            return Err(HarnessError::NoRepeats);
        }
        let f = self.experiment.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(HarnessError::Config(format!("train_fraction {f} outside (0, 1)")));
        }
        if self.pipeline.n_crops == 0 {
            return Err(HarnessError::Config("n_crops must be at least 1".into()));
        }
        self.pipeline.model.validate()?;
        self.pipeline.loss.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

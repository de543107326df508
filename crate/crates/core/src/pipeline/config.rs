//! Run configuration: one TOML document covering data, model, loss and optimizer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bodymodel::BodyModel;
use crate::error::{Error, Result};
use crate::objective::LossWeights;
use crate::regressor::RegressorConfig;
use crate::synthdata::DataConfig;
use crate::temporal::TemporalConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Each epoch visits every `window_stride`-th training window, starting at
    /// a random offset per sequence and epoch.
    pub window_stride: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 24,
            window_stride: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Epochs without a validation improvement before the rate is cut.
    pub patience: usize,
    pub factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            factor: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    /// Body model document; the bundled model when absent.
    pub body_model: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub temporal: TemporalConfig,
    pub regressor: RegressorConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub paths: DataPaths,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text, path)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn body_model(&self) -> Result<BodyModel> {
        match &self.paths.body_model {
            Some(p) => BodyModel::load(p),
            None => Ok(BodyModel::default_model()),
        }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        self.data.validate(model)?;
        self.temporal.validate()?;
        self.regressor.validate()?;
        self.loss.validate()?;
        if self.temporal.feature_dim != self.data.feature_dim {
            return Err(Error::config(
                "temporal.feature_dim",
                format!(
                    "{} differs from data.feature_dim {}",
                    self.temporal.feature_dim, self.data.feature_dim
                ),
            ));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate >= 0.0) {
            return Err(Error::config(
                "optimizer.learning_rate",
                "must be finite and nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return Err(Error::config(
                "optimizer",
                "need 0 ≤ beta < 1 and epsilon > 0",
            ));
        }
        if o.batch_size == 0 {
            return Err(Error::config("optimizer.batch_size", "must be positive"));
        }
        if o.window_stride == 0 {
            return Err(Error::config("optimizer.window_stride", "must be positive"));
        }
        if self.data.frames < self.temporal.window {
            return Err(Error::config(
                "data.frames",
                format!(
                    "{} frames cannot hold a window of {}",
                    self.data.frames, self.temporal.window
                ),
            ));
        }
        let s = &self.schedule;
        if s.patience == 0 || !(s.factor > 0.0 && s.factor <= 1.0) {
            return Err(Error::config(
                "schedule",
                "need patience ≥ 1 and 0 < factor ≤ 1",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate(&BodyModel::default_model()).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("inline")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 4\n[optimizer]\nlearning_rate = 0.0\nbeta1 = 0.9\nbeta2 = 0.999\nepsilon = 1e-8\nbatch_size = 8\nepochs = 1\nwindow_stride = 1\n", Path::new("x")).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.optimizer.batch_size, 8);
        assert_eq!(cfg.temporal, TemporalConfig::default());
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("seed = 1\nsneed = 2\n", Path::new("x")).is_err());
        let model = BodyModel::default_model();
        let mut cfg = RunConfig::default();
        cfg.temporal.feature_dim = 128;
        let err = cfg.validate(&model).unwrap_err().to_string();
        assert!(err.contains("temporal.feature_dim"), "{err}");
        let mut cfg = RunConfig::default();
        cfg.optimizer.batch_size = 0;
        assert!(cfg.validate(&model).is_err());
    }
}

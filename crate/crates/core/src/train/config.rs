use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters shared by every training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_cls: f64,
    pub lambda_kd: f64,
    pub lambda_audit: f64,
    /// Distillation temperature.
    pub temperature: f64,
    /// Significance level for the per-epoch forget-set audit.
    pub alpha: f64,
    /// Stop once the forget-set p-value stays below `alpha` for 3 epochs.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-5,
            batch_size: 128,
            seed: 0,
            lambda_cls: 1.0,
            lambda_kd: 1.0,
            lambda_audit: 1.0,
            temperature: 4.0,
            alpha: 0.05,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_kd", self.lambda_kd),
            ("lambda_audit", self.lambda_audit),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs, 50);
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(c.batch_size, 128);
        assert_eq!((c.lambda_cls, c.lambda_kd, c.lambda_audit), (1.0, 1.0, 1.0));
        assert_eq!(c.temperature, 4.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_invalid() {
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { lambda_kd: -1.0, ..Default::default() },
            TrainConfig { temperature: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}

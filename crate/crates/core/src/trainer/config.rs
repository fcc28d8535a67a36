use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, DEFAULT_MAX_NEW};
use crate::strategies::{StrategyKind, GRADNORM_ALPHA};
use crate::unify::FormatVariant;
use crate::{Error, Result, Role, Split};

/// One corpus file of a training roster. `role` and `split` override the
/// values stored in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    32
}
fn default_accum() -> usize {
    8
}
fn default_lr_model() -> f64 {
    3e-4
}
fn default_lr_weights() -> f64 {
    1e-3
}
fn default_alpha() -> f64 {
    GRADNORM_ALPHA
}
fn default_eval_every() -> usize {
    1
}
fn default_selection() -> String {
    "overall".into()
}
fn default_max_new() -> usize {
    DEFAULT_MAX_NEW
}
fn default_min_freq() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: StrategyKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_accum")]
    pub grad_accumulation_steps: usize,
    #[serde(default = "default_lr_model")]
    pub lr_model: f64,
    #[serde(default = "default_lr_weights")]
    pub lr_weights: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: FormatVariant,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub roster: Vec<RosterEntry>,
    /// Checkpoint-selection criterion: `overall`, a task, or `task.metric`.
    #[serde(default = "default_selection")]
    pub selection: String,
    /// Seed for training-time negative balancing; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_seed: Option<u64>,
    #[serde(default = "default_alpha")]
    pub gradnorm_alpha: f64,
    /// Dev evaluation period in epochs; 0 disables it.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Carve dev sets out of training corpora by dialogue-id hash.
    #[serde(default)]
    pub holdout: bool,
    #[serde(default = "default_max_new")]
    pub max_new: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl TrainConfig {
    pub fn new(strategy: StrategyKind) -> Self {
        TrainConfig {
            strategy,
            epochs: default_epochs(),
            batch_size: default_batch(),
            grad_accumulation_steps: default_accum(),
            lr_model: default_lr_model(),
            lr_weights: default_lr_weights(),
            seed: 0,
            variant: FormatVariant::QA,
            model: ModelConfig::default(),
            roster: Vec::new(),
            selection: default_selection(),
            negative_seed: None,
            gradnorm_alpha: default_alpha(),
            eval_every: default_eval_every(),
            holdout: false,
            max_new: default_max_new(),
            min_freq: default_min_freq(),
            record_wall_clock: false,
        }
    }

    pub fn negative_seed(&self) -> u64 {
        self.negative_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.epochs, "epochs"),
            (self.batch_size, "batch_size"),
            (self.grad_accumulation_steps, "grad_accumulation_steps"),
            (self.max_new, "max_new"),
            (self.min_freq, "min_freq"),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (v, name) in [(self.lr_model, "lr_model"), (self.lr_weights, "lr_weights")] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.gradnorm_alpha.is_finite() {
            return Err(Error::invalid("gradnorm_alpha must be finite"));
        }
        self.model.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

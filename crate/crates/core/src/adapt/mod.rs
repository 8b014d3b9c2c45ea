//! Offline self-supervised training and inference-time adaptation.

mod direct;
mod grid;
mod instance;
mod mask;
mod objective;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::EngineError;

pub use direct::{direct_objective, direct_objective_in, direct_optimize, network_outputs, DirectOutcome};
pub use grid::{ablation_grid, GridConfig, GridRow, GRID_CSV_HEADER};
pub use instance::{
    adapt_instance, adapt_instance_model, adapt_instance_snapshots, adapt_instances, adapt_sequential, evaluate_depth, AdaptOutcome,
    SequentialOutcome, TraceRow, TRACE_CSV_HEADER,
};
pub use mask::{is_norm_tensor, Component, ComponentMask};
pub use objective::{forward, forward_in, predict_depth, Batch, Forward, TemporalSources};
pub use train::{train, train_from, validation_loss, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: u64,
        source: EngineError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    Instance,
    Sequential,
    Off,
}

impl std::str::FromStr for AdaptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "instance" => Ok(AdaptMode::Instance),
            "sequential" => Ok(AdaptMode::Sequential),
            "off" => Ok(AdaptMode::Off),
            _ => Err(format!("unknown mode {s:?} (instance, sequential, off)")),
        }
    }
}

/// Source views that supervise the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Supervision {
    #[serde(rename = "mono")]
    Mono,
    #[serde(rename = "stereo")]
    Stereo,
    #[serde(rename = "mono+stereo", alias = "ms")]
    MonoStereo,
}

impl Supervision {
    pub fn uses_temporal(self) -> bool {
        matches!(self, Supervision::Mono | Supervision::MonoStereo)
    }

    pub fn uses_stereo(self) -> bool {
        matches!(self, Supervision::Stereo | Supervision::MonoStereo)
    }
}

impl std::str::FromStr for Supervision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mono" | "m" => Ok(Supervision::Mono),
            "stereo" | "s" => Ok(Supervision::Stereo),
            "mono+stereo" | "ms" => Ok(Supervision::MonoStereo),
            _ => Err(format!("unknown supervision {s:?} (mono, stereo, mono+stereo)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    pub steps: usize,
    pub lr: f64,
    pub mask: ComponentMask,
    pub supervision: Supervision,
    #[serde(default)]
    pub weights: crate::losses::LossWeights,
}

impl AdaptConfig {
    pub fn instance() -> Self {
        Self {
            mode: AdaptMode::Instance,
            steps: 50,
            lr: 0.1,
            mask: ComponentMask::encoders(),
            supervision: Supervision::Mono,
            weights: Default::default(),
        }
    }

    pub fn sequential() -> Self {
        Self {
            mode: AdaptMode::Sequential,
            steps: 5,
            ..Self::instance()
        }
    }

    pub fn off() -> Self {
        Self {
            mode: AdaptMode::Off,
            steps: 0,
            ..Self::instance()
        }
    }

    pub fn default_steps(mode: AdaptMode) -> usize {
        match mode {
            AdaptMode::Instance => 50,
            AdaptMode::Sequential => 5,
            AdaptMode::Off => 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.weights.validate()?;
        if self.mode != AdaptMode::Off {
            if !(self.lr > 0.0 && self.lr.is_finite()) {
                return Err(format!("lr must be positive, got {}", self.lr));
            }
            if self.steps == 0 {
                return Err("steps must be at least 1 when adaptation is enabled".into());
            }
            if self.effective_mask().is_empty() {
                return Err("component mask is empty".into());
            }
        }
        Ok(())
    }

    /// Mask actually applied: stereo-only supervision never adapts the
    /// pose networks, which it does not use.
    pub fn effective_mask(&self) -> ComponentMask {
        if self.supervision == Supervision::Stereo {
            self.mask.without_pose()
        } else {
            self.mask.clone()
        }
    }
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self::instance()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default)]
    pub weights: crate::losses::LossWeights,
    pub seed: u64,
    #[serde(default = "mono")]
    pub supervision: Supervision,
}

fn mono() -> Supervision {
    Supervision::Mono
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 4,
            lr: 1e-4,
            weights: Default::default(),
            seed: 0,
            supervision: Supervision::Mono,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        Ok(())
    }
}

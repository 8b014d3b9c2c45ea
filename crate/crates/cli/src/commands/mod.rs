pub mod ablate;
pub mod adapt;
pub mod eval;
pub mod synth;
pub mod train;

use std::path::Path;

use adaptdepth::models::{load_checkpoint, Checkpoint};
use adaptdepth::scenes::{Dataset, FrameBundle, LoadOptions, Split};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Which frames of a dataset a command runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSelection {
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default = "yes")]
    pub drop_stationary: bool,
    /// Keep only the first `limit` selected frames.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for FrameSelection {
    fn default() -> Self {
        Self {
            split: None,
            drop_stationary: true,
            limit: None,
        }
    }
}

impl FrameSelection {
    pub fn load(&self, dataset: &Dataset) -> Vec<FrameBundle> {
        let mut frames = dataset.bundles(&LoadOptions {
            split: self.split,
            drop_stationary: self.drop_stationary,
        });
        if let Some(n) = self.limit {
            frames.truncate(n);
        }
        frames
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    Ok(Dataset::load(dir)?)
}

pub fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(load_checkpoint(path)?)
}

/// Checks that a checkpoint's input resolution matches the data.
pub fn check_resolution(ckpt: &Checkpoint, dataset: &Dataset) -> Result<(), CliError> {
    let cfg = &ckpt.model.config;
    let (w, h) = (dataset.manifest.width, dataset.manifest.height);
    if (cfg.width, cfg.height) != (w, h) {
        return Err(CliError::Config(format!(
            "checkpoint expects {}x{} frames, dataset has {w}x{h}",
            cfg.width, cfg.height
        )));
    }
    Ok(())
}

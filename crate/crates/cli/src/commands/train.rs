use std::path::{Path, PathBuf};

use adaptdepth::adapt::{train, train_from, validation_loss, Supervision, TrainConfig};
use adaptdepth::losses::LossWeights;
use adaptdepth::models::{save_checkpoint, ModelConfig};
use adaptdepth::scenes::Split;
use serde::{Deserialize, Serialize};

use super::{check_resolution, load_dataset, load_model, FrameSelection};
use crate::config::{self, Overrides};
use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default = "train_frames")]
    pub frames: FrameSelection,
    /// Model architecture; defaults to the standard network at the data's
    /// resolution. Ignored when resuming.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::supervision")]
    pub supervision: Supervision,
    #[serde(default)]
    pub weights: LossWeights,
}

mod defaults {
    use adaptdepth::adapt::{Supervision, TrainConfig};

    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn batch() -> usize {
        TrainConfig::default().batch
    }
    pub fn lr() -> f64 {
        TrainConfig::default().lr
    }
    pub fn supervision() -> Supervision {
        Supervision::Mono
    }
}

impl TrainRun {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            weights: self.weights,
            seed: self.seed,
            supervision: self.supervision,
        }
    }
}

fn train_frames() -> FrameSelection {
    FrameSelection {
        split: Some(Split::Train),
        ..FrameSelection::default()
    }
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Base configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// mono, stereo or ms
    #[arg(long)]
    pub supervision: Option<Supervision>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn output_dir(ckpt: &Path) -> PathBuf {
    match ckpt.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut flags = Overrides::default();
    flags
        .set("data", args.data.as_ref())
        .set("out", args.out.as_ref())
        .set("epochs", args.epochs)
        .set("lr", args.lr)
        .set("batch", args.batch)
        .set("supervision", args.supervision)
        .set("seed", args.seed)
        .set("resume", args.resume.as_ref());
    let mut run: TrainRun = config::resolve(args.config.as_deref(), flags)?;
    let cfg = run.train_config();
    cfg.validate().map_err(CliError::Config)?;
    let dataset = load_dataset(&run.data)?;
    let frames = run.frames.load(&dataset);
    let report = match &run.resume {
        Some(path) => {
            let start = load_model(path)?;
            check_resolution(&start, &dataset)?;
            run.model = Some(start.model.config.clone());
            train_from(start, &frames, &cfg)?
        }
        None => {
            let model = run.model.get_or_insert_with(|| ModelConfig {
                width: dataset.manifest.width,
                height: dataset.manifest.height,
                ..ModelConfig::default()
            });
            if (model.width, model.height) != (dataset.manifest.width, dataset.manifest.height) {
                return Err(CliError::Config(format!(
                    "model expects {}x{} frames, dataset has {}x{}",
                    model.width, model.height, dataset.manifest.width, dataset.manifest.height
                )));
            }
            train(&frames, model.clone(), &cfg)?
        }
    };
    let dir = output_dir(&run.out);
    config::write_resolved(&dir, &run)?;
    save_checkpoint(&run.out, &report.checkpoint)?;
    let val = FrameSelection {
        split: Some(Split::Val),
        ..FrameSelection::default()
    }
    .load(&dataset);
    let val_loss = validation_loss(&report.checkpoint.model, &val, &run.weights, run.supervision).ok();
    eprintln!(
        "trained {} epochs ({} steps); final epoch loss {}; validation photometric {}",
        report.checkpoint.meta.epochs,
        report.checkpoint.meta.steps,
        report.epoch_means.last().map_or("n/a".into(), |v| format!("{v:.5}")),
        val_loss.map_or("n/a".into(), |v| format!("{v:.5}")),
    );
    Ok(())
}

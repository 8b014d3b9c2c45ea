use std::fs;
use std::path::{Path, PathBuf};

use adaptdepth::metrics::{Crop, EvalRange, Scaling};
use adaptdepth::scenes::read_depth;
use serde::{Deserialize, Serialize};

use crate::config::{self, Overrides};
use crate::error::CliError;
use crate::report;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[serde(default = "super::adapt::defaults::scaling")]
    pub scaling: Scaling,
    #[serde(default)]
    pub eval: EvalRange,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of predicted depth files (or one containing depth/).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Dataset directory or directory of ground-truth depth files.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// median, baseline or none
    #[arg(long, value_parser = report::parse_scaling)]
    pub scaling: Option<Scaling>,
    /// Evaluation depth cap.
    #[arg(long)]
    pub max_depth: Option<f64>,
    /// Evaluation depth floor.
    #[arg(long)]
    pub min_depth: Option<f64>,
    /// Restrict evaluation to the standard Eigen-split crop.
    #[arg(long)]
    pub garg_crop: bool,
    /// Directory for metrics.csv and config.resolved.json; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `dir/depth` when it exists, else `dir`.
fn depth_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("depth");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Frame indices of `%06d.f32` files, sorted.
fn depth_files(dir: &Path) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".f32") {
            if let Ok(i) = stem.parse() {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let mut range = None;
    if args.min_depth.is_some() || args.max_depth.is_some() || args.garg_crop {
        let mut r = match &args.config {
            Some(f) => config::read_json_value(f)?
                .get("eval")
                .map(|v| serde_json::from_value::<EvalRange>(v.clone()))
                .transpose()
                .map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?
                .unwrap_or_default(),
            None => EvalRange::default(),
        };
        r.min_depth = args.min_depth.unwrap_or(r.min_depth);
        r.max_depth = args.max_depth.unwrap_or(r.max_depth);
        if args.garg_crop {
            r.crop = Some(Crop::GARG);
        }
        range = Some(r);
    }
    let mut flags = Overrides::default();
    flags
        .set("pred", args.pred.as_ref())
        .set("gt", args.gt.as_ref())
        .set("scaling", args.scaling)
        .set("eval", range)
        .set("out", args.out.as_ref());
    let run: EvalRun = config::resolve(args.config.as_deref(), flags)?;
    if !(run.eval.min_depth > 0.0 && run.eval.min_depth < run.eval.max_depth) {
        return Err(CliError::Config(format!(
            "evaluation range ({}, {}) is empty",
            run.eval.min_depth, run.eval.max_depth
        )));
    }
    let (pred_dir, gt_dir) = (depth_dir(&run.pred), depth_dir(&run.gt));
    let frames = depth_files(&pred_dir)?;
    if frames.is_empty() {
        return Err(CliError::Io(format!("{}: no depth files", pred_dir.display())));
    }
    let mut per_frame = Vec::new();
    for i in frames {
        let name = adaptdepth::scenes::frame_name(i, "f32");
        let pred = read_depth(&pred_dir.join(&name))?;
        let gt = read_depth(&gt_dir.join(&name))?;
        if pred.shape() != gt.shape() {
            return Err(CliError::Config(format!(
                "frame {i}: prediction {:?} vs ground truth {:?}",
                pred.shape(),
                gt.shape()
            )));
        }
        let m = adaptdepth::adapt::evaluate_depth(&pred, &gt, run.scaling, &run.eval)
            .map_err(|e| CliError::Config(format!("frame {i}: {e}")))?;
        per_frame.push((i, m));
    }
    let text = report::metrics_csv(&per_frame);
    match &run.out {
        Some(dir) => {
            config::write_resolved(dir, &run)?;
            config::write_text(&dir.join(report::METRICS_FILE), &text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

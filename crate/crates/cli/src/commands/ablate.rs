use std::path::PathBuf;

use adaptdepth::adapt::{ablation_grid, AdaptConfig, GridConfig, Supervision, GRID_CSV_HEADER};
use adaptdepth::losses::LossWeights;
use adaptdepth::metrics::Scaling;
use serde::{Deserialize, Serialize};

use super::{check_resolution, load_dataset, load_model, FrameSelection};
use crate::config::{self, Overrides};
use crate::error::CliError;
use crate::report::{self, Series};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRun {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub grid: Vec<GridConfig>,
    #[serde(default = "super::adapt::defaults::supervision")]
    pub supervision: Supervision,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "super::adapt::defaults::scaling")]
    pub scaling: Scaling,
    #[serde(default)]
    pub frames: FrameSelection,
    #[serde(default = "super::adapt::defaults::jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub svg: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON list of {"mask": {...}, "lr": .., "steps": ..}.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// mono, stereo or ms
    #[arg(long)]
    pub supervision: Option<Supervision>,
    /// median, baseline or none
    #[arg(long, value_parser = report::parse_scaling)]
    pub scaling: Option<Scaling>,
    /// Evaluate only the first N selected frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write chart.svg with one line per configuration.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &AblateArgs) -> Result<(), CliError> {
    let grid: Option<Vec<GridConfig>> = match &args.grid {
        Some(path) => Some(
            serde_json::from_value(config::read_json_value(path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let frames = match (args.frames, &args.config) {
        (Some(n), file) => {
            let mut sel = match file {
                Some(f) => config::read_json_value(f)?
                    .get("frames")
                    .map(|v| serde_json::from_value::<FrameSelection>(v.clone()))
                    .transpose()
                    .map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?
                    .unwrap_or_default(),
                None => FrameSelection::default(),
            };
            sel.limit = Some(n);
            Some(sel)
        }
        _ => None,
    };
    let mut flags = Overrides::default();
    flags
        .set("ckpt", args.ckpt.as_ref())
        .set("data", args.data.as_ref())
        .set("out", args.out.as_ref())
        .set("grid", grid)
        .set("supervision", args.supervision)
        .set("scaling", args.scaling)
        .set("frames", frames)
        .set("jobs", args.jobs)
        .set("svg", args.svg.then_some(true))
        .set("seed", args.seed);
    let run: AblateRun = config::resolve(args.config.as_deref(), flags)?;
    if run.grid.is_empty() {
        return Err(CliError::Config("grid has no configurations".into()));
    }
    if run.jobs == 0 {
        return Err(CliError::Config("jobs must be at least 1".into()));
    }
    let ckpt = load_model(&run.ckpt)?;
    let dataset = load_dataset(&run.data)?;
    check_resolution(&ckpt, &dataset)?;
    let bundles = run.frames.load(&dataset);
    if bundles.is_empty() {
        return Err(CliError::Config("no frames selected".into()));
    }
    let template = AdaptConfig {
        supervision: run.supervision,
        weights: run.weights,
        ..AdaptConfig::instance()
    };
    let rows = ablation_grid(&ckpt.model, &bundles, &run.grid, &template, run.scaling, run.jobs);

    config::write_resolved(&run.out, &run)?;
    let mut text = format!("{GRID_CSV_HEADER}\n");
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    config::write_text(&run.out.join(report::METRICS_FILE), &text)?;
    if run.svg {
        let series: Vec<Series> = rows
            .iter()
            .map(|r| Series {
                label: format!("{} lr={} steps={}", r.config.mask.label(), r.config.lr, r.config.steps),
                values: r.per_frame.clone(),
            })
            .collect();
        config::write_text(&run.out.join(report::CHART_FILE), &report::line_chart(&series, "frame", "abs rel"))?;
    }
    let diverged: usize = rows.iter().map(|r| r.diverged_frames).sum();
    if diverged > 0 {
        return Err(CliError::Diverged(format!("{diverged} adaptation jobs diverged")));
    }
    Ok(())
}

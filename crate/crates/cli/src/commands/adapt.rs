use std::path::PathBuf;

use adaptdepth::adapt::{
    adapt_instances, adapt_sequential, evaluate_depth, AdaptConfig, AdaptMode, AdaptOutcome, ComponentMask,
    Supervision, TraceRow, TRACE_CSV_HEADER,
};
use adaptdepth::losses::LossWeights;
use adaptdepth::metrics::{DepthMetrics, EvalRange, Scaling};
use adaptdepth::scenes::{frame_name, write_depth, FrameBundle};
use serde::{Deserialize, Serialize};

use super::{check_resolution, load_dataset, load_model, FrameSelection};
use crate::config::{self, Overrides};
use crate::error::CliError;
use crate::report::{self, Series};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptRun {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default = "defaults::mode")]
    pub mode: AdaptMode,
    /// Defaults by mode: instance 50, sequential 5, off 0.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "ComponentMask::encoders")]
    pub mask: ComponentMask,
    #[serde(default = "defaults::supervision")]
    pub supervision: Supervision,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "defaults::scaling")]
    pub scaling: Scaling,
    #[serde(default)]
    pub eval: EvalRange,
    #[serde(default)]
    pub frames: FrameSelection,
    #[serde(default = "defaults::jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub svg: bool,
    #[serde(default)]
    pub seed: u64,
}

pub(crate) mod defaults {
    use adaptdepth::adapt::{AdaptConfig, AdaptMode, Supervision};
    use adaptdepth::metrics::Scaling;

    pub fn mode() -> AdaptMode {
        AdaptMode::Instance
    }
    pub fn lr() -> f64 {
        AdaptConfig::instance().lr
    }
    pub fn supervision() -> Supervision {
        Supervision::Mono
    }
    pub fn scaling() -> Scaling {
        Scaling::Median
    }
    pub fn jobs() -> usize {
        1
    }
}

#[derive(Debug, clap::Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// instance, sequential or off
    #[arg(long)]
    pub mode: Option<AdaptMode>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated components, e.g. depth_encoder,pose_encoder
    #[arg(long)]
    pub components: Option<String>,
    /// mono, stereo or ms
    #[arg(long)]
    pub supervision: Option<Supervision>,
    /// median, baseline or none
    #[arg(long, value_parser = report::parse_scaling)]
    pub scaling: Option<Scaling>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel instance jobs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write chart.svg.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl AdaptRun {
    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            mode: self.mode,
            steps: self.steps.unwrap_or(AdaptConfig::default_steps(self.mode)),
            lr: self.lr,
            mask: self.mask.clone(),
            supervision: self.supervision,
            weights: self.weights,
        }
    }
}

pub fn run(args: &AdaptArgs) -> Result<(), CliError> {
    let mut flags = Overrides::default();
    let mask = match &args.components {
        Some(list) => {
            let mut m = ComponentMask::parse_list(list).map_err(CliError::Config)?;
            if let Some(file) = &args.config {
                // Keep the file's norm-statistics choice when only the list changes.
                if let Some(freeze) = config::read_json_value(file)?
                    .pointer("/mask/freeze_norm_stats")
                    .and_then(|v| v.as_bool())
                {
                    m.freeze_norm_stats = freeze;
                }
            }
            Some(m)
        }
        None => None,
    };
    flags
        .set("ckpt", args.ckpt.as_ref())
        .set("data", args.data.as_ref())
        .set("out", args.out.as_ref())
        .set("mode", args.mode)
        .set("steps", args.steps)
        .set("lr", args.lr)
        .set("mask", mask)
        .set("supervision", args.supervision)
        .set("scaling", args.scaling)
        .set("jobs", args.jobs)
        .set("svg", args.svg.then_some(true))
        .set("seed", args.seed);
    let mut run: AdaptRun = config::resolve(args.config.as_deref(), flags)?;
    let cfg = run.adapt_config();
    run.steps = Some(cfg.steps);
    cfg.validate().map_err(CliError::Config)?;
    if run.jobs == 0 {
        return Err(CliError::Config("jobs must be at least 1".into()));
    }
    let ckpt = load_model(&run.ckpt)?;
    let dataset = load_dataset(&run.data)?;
    check_resolution(&ckpt, &dataset)?;
    let frames = run.frames.load(&dataset);
    if frames.is_empty() {
        return Err(CliError::Config("no frames selected".into()));
    }
    let model = &ckpt.model;
    let (outcomes, trace) = match run.mode {
        AdaptMode::Sequential => {
            let seq = adapt_sequential(model, &frames, &cfg)?;
            (seq.frames, seq.trace)
        }
        _ => {
            let outcomes = adapt_instances(model, &frames, &cfg, run.jobs)
                .into_iter()
                .collect::<Result<Vec<AdaptOutcome>, _>>()?;
            let trace = instance_trace(&frames, &outcomes, &run);
            (outcomes, trace)
        }
    };

    config::write_resolved(&run.out, &run)?;
    let depth_dir = run.out.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(|e| CliError::io(&depth_dir, e))?;
    for (b, o) in frames.iter().zip(&outcomes) {
        write_depth(&depth_dir.join(frame_name(b.index, "f32")), &o.depth)?;
    }
    let mut per_frame = Vec::new();
    for (b, o) in frames.iter().zip(&outcomes) {
        if let Some(gt) = &b.depth {
            let m = evaluate_depth(&o.depth, gt, run.scaling, &run.eval)
                .map_err(|e| CliError::Config(format!("frame {}: {e}", b.index)))?;
            per_frame.push((b.index, m));
        }
    }
    config::write_text(&run.out.join(report::METRICS_FILE), &report::metrics_csv(&per_frame))?;
    let mut text = String::from(TRACE_CSV_HEADER);
    text.push('\n');
    for row in &trace {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    config::write_text(&run.out.join(report::TRACE_FILE), &text)?;
    if run.svg {
        let series = Series {
            label: format!("{} ({})", run.mask.label(), mode_name(run.mode)),
            values: per_frame.iter().map(|(_, m)| m.abs_rel).collect(),
        };
        config::write_text(&run.out.join(report::CHART_FILE), &report::line_chart(&[series], "frame", "abs rel"))?;
    }

    let diverged = outcomes.iter().filter(|o| o.diverged).count();
    let steps: usize = outcomes.iter().map(|o| o.gradient_steps).sum();
    if let Some(mean) = DepthMetrics::mean(&per_frame.iter().map(|p| p.1).collect::<Vec<_>>()) {
        eprintln!("{} frames, {steps} gradient steps, mean abs_rel {:.4}", frames.len(), mean.abs_rel);
    }
    if diverged > 0 {
        return Err(CliError::Diverged(format!(
            "{diverged} of {} frames diverged; best-so-far depth written",
            frames.len()
        )));
    }
    Ok(())
}

fn mode_name(mode: AdaptMode) -> &'static str {
    match mode {
        AdaptMode::Instance => "instance",
        AdaptMode::Sequential => "sequential",
        AdaptMode::Off => "off",
    }
}

fn instance_trace(frames: &[FrameBundle], outcomes: &[AdaptOutcome], run: &AdaptRun) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for (b, o) in frames.iter().zip(outcomes) {
        let abs_rel = b
            .depth
            .as_ref()
            .and_then(|gt| evaluate_depth(&o.depth, gt, run.scaling, &run.eval).ok())
            .map(|m| m.abs_rel);
        let n = o.trace.len();
        rows.extend(o.trace.iter().enumerate().map(|(step, loss)| TraceRow {
            frame_index: b.index,
            step,
            loss: *loss,
            abs_rel: if step + 1 == n { abs_rel } else { None },
        }));
    }
    rows
}

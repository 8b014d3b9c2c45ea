use rayon::prelude::*;

use super::objective::{forward, Batch, TemporalSources};
use super::{AdaptConfig, AdaptError, ComponentMask};
use crate::autodiff::optim::sgd_step;
use crate::autodiff::{EngineError, GroupName, NormMode, Tensor};
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate_map, DepthMetrics, EvalRange, MetricsError, Scaling};
use crate::models::Model;
use crate::scenes::FrameBundle;

pub const TRACE_CSV_HEADER: &str = "frame_index,step,total,photometric,smoothness,mask_ratio,abs_rel";

/// Result of adapting to one frame.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    /// Depth (1, 1, H, W) after adaptation, or the best-so-far snapshot
    /// when the run diverged.
    pub depth: Tensor<f32>,
    /// Loss before each update and after the last one.
    pub trace: Vec<LossBreakdown>,
    pub diverged: bool,
    pub gradient_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub frame_index: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub abs_rel: Option<f64>,
}

impl TraceRow {
    pub fn csv_row(&self) -> String {
        let b = &self.loss;
        let abs_rel = self.abs_rel.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.frame_index, self.step, b.total, b.photometric, b.smoothness, b.mask_ratio, abs_rel
        )
    }
}

#[derive(Clone, Debug)]
pub struct SequentialOutcome {
    pub frames: Vec<AdaptOutcome>,
    pub trace: Vec<TraceRow>,
    pub gradient_steps: usize,
    /// Weights after the last frame.
    pub model: Model<f32>,
}

struct Run {
    outcome: AdaptOutcome,
    snapshots: Vec<Tensor<f32>>,
    /// Weights to continue from: final weights, or the last weights with
    /// a finite loss after divergence.
    model: Model<f32>,
}

fn is_divergence(e: &EngineError) -> bool {
    matches!(e, EngineError::NonFinite(_))
}

fn configure(model: &mut Model<f32>, mask: &ComponentMask) {
    for g in GroupName::ALL {
        let group = model.group_mut(g);
        group.trainable = mask.touches(g);
        group.norm_stats_frozen = mask.freeze_norm_stats || !mask.touches(g);
    }
}

fn check(cfg: &AdaptConfig) -> Result<ComponentMask, AdaptError> {
    cfg.weights.validate().map_err(AdaptError::Config)?;
    let updates = cfg.steps > 0 && cfg.mode != super::AdaptMode::Off;
    if updates && !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(AdaptError::Config(format!("lr must be positive, got {}", cfg.lr)));
    }
    let mask = cfg.effective_mask();
    if mask.is_empty() && updates {
        return Err(AdaptError::Config("component mask is empty".into()));
    }
    Ok(mask)
}

/// `steps` SGD updates on `model` against `batch`; depth is recorded
/// after each step count listed in `snapshot_at`.
fn run(
    mut model: Model<f32>,
    batch: &Batch<f32>,
    cfg: &AdaptConfig,
    mask: &ComponentMask,
    steps: usize,
    snapshot_at: &[usize],
) -> Result<Run, AdaptError> {
    configure(&mut model, mask);
    let mode = if mask.freeze_norm_stats {
        NormMode::Eval
    } else {
        NormMode::Train
    };
    let select = |g: GroupName, n: &str| mask.selects(g, n);
    let mut trace = Vec::with_capacity(steps + 1);
    let mut snapshots: Vec<Option<Tensor<f32>>> = vec![None; snapshot_at.len()];
    let mut best: Option<(f64, Tensor<f32>)> = None;
    let mut last_finite = model.clone();
    let mut diverged = false;
    let mut updates = 0;
    let mut depth = None;
    for step in 0..=steps {
        let mut fw = match forward(&model, batch, &cfg.weights, mode, &select) {
            Ok(fw) => fw,
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let d = fw.depth(&model)?;
        trace.push(fw.breakdown);
        if best.as_ref().is_none_or(|b| fw.breakdown.total < b.0) {
            best = Some((fw.breakdown.total, d.clone()));
        }
        for (slot, &at) in snapshots.iter_mut().zip(snapshot_at) {
            if at == step {
                *slot = Some(d.clone());
            }
        }
        depth = Some(d);
        if step == steps {
            break;
        }
        let grads = match fw.gradients() {
            Ok(g) => g,
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        last_finite.clone_from(&model);
        for g in GroupName::ALL {
            if mask.touches(g) {
                sgd_step(model.group_mut(g), &grads[g as usize], cfg.lr, &|n| mask.selects(g, n))?;
            }
        }
        if !mask.freeze_norm_stats {
            model.update_norm_stats(&fw.graph, &fw.records)?;
        }
        updates += 1;
    }
    let best_depth = best
        .map(|b| b.1)
        .ok_or_else(|| AdaptError::Engine(EngineError::NonFinite("initial adaptation loss")))?;
    let (depth, model) = if diverged {
        (best_depth.clone(), last_finite)
    } else {
        (depth.expect("at least one loss evaluation"), model)
    };
    let snapshots = snapshots
        .into_iter()
        .map(|s| s.unwrap_or_else(|| if diverged { best_depth.clone() } else { depth.clone() }))
        .collect();
    let mut model = model;
    restore_flags(&mut model);
    Ok(Run {
        outcome: AdaptOutcome {
            depth,
            trace,
            diverged,
            gradient_steps: updates,
        },
        snapshots,
        model,
    })
}

fn restore_flags(model: &mut Model<f32>) {
    for g in GroupName::ALL {
        let group = model.group_mut(g);
        group.trainable = true;
        group.norm_stats_frozen = false;
    }
}

/// Adapts a copy of `base` to one frame and returns the post-adaptation
/// depth. `base` itself is never modified.
pub fn adapt_instance(base: &Model<f32>, bundle: &FrameBundle, cfg: &AdaptConfig) -> Result<AdaptOutcome, AdaptError> {
    Ok(adapt_instance_snapshots(base, bundle, cfg, &[])?.0)
}

/// As [`adapt_instance`], also returning the depth after each of the
/// listed step counts (all at most `cfg.steps`).
pub fn adapt_instance_snapshots(
    base: &Model<f32>,
    bundle: &FrameBundle,
    cfg: &AdaptConfig,
    snapshot_at: &[usize],
) -> Result<(AdaptOutcome, Vec<Tensor<f32>>), AdaptError> {
    let mask = check(cfg)?;
    if let Some(&s) = snapshot_at.iter().find(|&&s| s > cfg.steps) {
        return Err(AdaptError::Config(format!("snapshot at step {s} beyond {} steps", cfg.steps)));
    }
    let steps = if cfg.mode == super::AdaptMode::Off { 0 } else { cfg.steps };
    let batch = Batch::new(&[bundle], cfg.supervision, TemporalSources::Both, &cfg.weights)?;
    let r = run(base.clone(), &batch, cfg, &mask, steps, snapshot_at)?;
    Ok((r.outcome, r.snapshots))
}

/// As [`adapt_instance`], also returning the adapted weights (the last
/// finite ones after divergence).
pub fn adapt_instance_model(
    base: &Model<f32>,
    bundle: &FrameBundle,
    cfg: &AdaptConfig,
) -> Result<(AdaptOutcome, Model<f32>), AdaptError> {
    let mask = check(cfg)?;
    let steps = if cfg.mode == super::AdaptMode::Off { 0 } else { cfg.steps };
    let batch = Batch::new(&[bundle], cfg.supervision, TemporalSources::Both, &cfg.weights)?;
    let r = run(base.clone(), &batch, cfg, &mask, steps, &[])?;
    Ok((r.outcome, r.model))
}

/// Independent instance adaptation of many frames on `jobs` threads.
/// Results come back in input order and do not depend on `jobs`.
pub fn adapt_instances(
    base: &Model<f32>,
    bundles: &[FrameBundle],
    cfg: &AdaptConfig,
    jobs: usize,
) -> Vec<Result<AdaptOutcome, AdaptError>> {
    if jobs <= 1 {
        return bundles.iter().map(|b| adapt_instance(base, b, cfg)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| bundles.par_iter().map(|b| adapt_instance(base, b, cfg)).collect()),
        Err(_) => bundles.iter().map(|b| adapt_instance(base, b, cfg)).collect(),
    }
}

/// Metrics of a (1, 1, H, W) prediction against ground truth.
pub fn evaluate_depth(
    pred: &Tensor<f32>,
    gt: &Tensor<f32>,
    scaling: Scaling,
    range: &EvalRange,
) -> Result<DepthMetrics, MetricsError> {
    if pred.shape() != gt.shape() {
        return Err(MetricsError::Length(pred.len(), gt.len(), gt.len()));
    }
    let shape = gt.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    evaluate_map(&p, &g, h, w, scaling, range)
}

/// Streams over `bundles` in order, carrying adapted weights from frame to
/// frame. Each frame is supervised by its predecessor (its successor for the
/// first frame). Reported depth is post-update; abs-rel uses median scaling.
pub fn adapt_sequential(
    base: &Model<f32>,
    bundles: &[FrameBundle],
    cfg: &AdaptConfig,
) -> Result<SequentialOutcome, AdaptError> {
    let mask = check(cfg)?;
    let steps = if cfg.mode == super::AdaptMode::Off { 0 } else { cfg.steps };
    let mut model = base.clone();
    let mut frames = Vec::with_capacity(bundles.len());
    let mut trace = Vec::new();
    let mut total_steps = 0;
    let range = EvalRange::default();
    for b in bundles {
        let batch = Batch::new(&[b], cfg.supervision, TemporalSources::Causal, &cfg.weights)?;
        let r = run(model, &batch, cfg, &mask, steps, &[])?;
        model = r.model;
        let abs_rel = b
            .depth
            .as_ref()
            .and_then(|gt| evaluate_depth(&r.outcome.depth, gt, Scaling::Median, &range).ok())
            .map(|m| m.abs_rel);
        let n = r.outcome.trace.len();
        for (step, loss) in r.outcome.trace.iter().enumerate() {
            trace.push(TraceRow {
                frame_index: b.index,
                step,
                loss: *loss,
                abs_rel: if step + 1 == n { abs_rel } else { None },
            });
        }
        total_steps += r.outcome.gradient_steps;
        frames.push(r.outcome);
    }
    Ok(SequentialOutcome {
        frames,
        trace,
        gradient_steps: total_steps,
        model,
    })
}

use super::objective::{Batch, TemporalSources};
use super::{AdaptError, Supervision};
use crate::autodiff::{EngineError, Graph, KinkSignature, Scalar, Tensor};
use crate::losses::{total_loss, LossBreakdown, LossWeights, SourceView};
use crate::models::DepthRange;
use crate::scenes::FrameBundle;

#[derive(Clone, Debug)]
pub struct DirectOutcome<T> {
    pub depth: Tensor<T>,
    /// Target-to-source motion vectors, one (N, 6) tensor per source.
    pub poses: Vec<Tensor<T>>,
    pub trace: Vec<LossBreakdown>,
    pub diverged: bool,
}

/// Loss as a function of a depth map and motion vectors treated as free
/// variables; returns their gradients when `want_grad`.
#[allow(clippy::type_complexity)]
pub fn direct_objective<T: Scalar>(
    batch: &Batch<T>,
    depth: &Tensor<T>,
    poses: &[Tensor<T>],
    weights: &LossWeights,
    range: &DepthRange,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<(Tensor<T>, Vec<Tensor<T>>)>), EngineError> {
    let (loss, grads, _) = direct_objective_in(Graph::new(), batch, depth, poses, weights, range, want_grad)?;
    Ok((loss, grads))
}

/// [`direct_objective`] recorded into a caller-supplied (empty) graph; also
/// returns that graph's kink signature.
#[allow(clippy::type_complexity)]
pub fn direct_objective_in<T: Scalar>(
    mut g: Graph<T>,
    batch: &Batch<T>,
    depth: &Tensor<T>,
    poses: &[Tensor<T>],
    weights: &LossWeights,
    range: &DepthRange,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<(Tensor<T>, Vec<Tensor<T>>)>, Option<KinkSignature>), EngineError> {
    if poses.len() != batch.temporal.len() {
        return Err(EngineError::Shape(format!(
            "{} motion vectors for {} sources",
            poses.len(),
            batch.temporal.len()
        )));
    }
    let weights = LossWeights { scales: 1, ..*weights };
    let target = g.constant(batch.target.clone())?;
    let d = g.leaf(depth.clone(), want_grad)?;
    // Disparity whose depth mapping reproduces `d`, for the smoothness term.
    let (a, b) = range.coefficients();
    let one = g.constant(Tensor::ones(&[1, 1, 1, 1]))?;
    let inv = g.div(one, d)?;
    let shifted = g.add_scalar(inv, -b)?;
    let sigma = g.scale(shifted, 1.0 / a)?;
    let mut motion = Vec::new();
    let mut sources = Vec::new();
    for (img, p) in batch.temporal.iter().zip(poses) {
        let image = g.constant(img.clone())?;
        let m = g.leaf(p.clone(), want_grad)?;
        let pose = g.pose_matrix(m)?;
        motion.push(m);
        sources.push(SourceView { image, pose });
    }
    if let Some((img, pose)) = &batch.stereo {
        let image = g.constant(img.clone())?;
        let pose = g.constant(pose.clone())?;
        sources.push(SourceView { image, pose });
    }
    let out = total_loss(
        &mut g,
        target,
        &batch.pyramid[..1],
        &sources,
        &[sigma],
        range,
        &batch.intrinsics,
        &weights,
    )?;
    let signature = g.kink_signature();
    if !want_grad {
        return Ok((out.breakdown, None, signature));
    }
    let mut grads = g.backward(out.total)?;
    let gd = grads.take(d).unwrap_or_else(|| Tensor::zeros(depth.shape()));
    let gp = motion
        .iter()
        .zip(poses)
        .map(|(&m, p)| grads.take(m).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((out.breakdown, Some((gd, gp)), signature))
}

/// Gradient descent on the network outputs themselves: the depth map
/// `depth` (N, 1, H, W) and the motion vectors, network weights untouched.
/// Depth is kept inside the representable range after every step.
#[allow(clippy::too_many_arguments)]
pub fn direct_optimize<T: Scalar>(
    bundle: &FrameBundle,
    depth: &Tensor<T>,
    poses: &[Tensor<T>],
    lr: f64,
    steps: usize,
    weights: &LossWeights,
    range: &DepthRange,
    supervision: Supervision,
) -> Result<DirectOutcome<T>, AdaptError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(AdaptError::Config(format!("lr must be non-negative, got {lr}")));
    }
    if let Some(bad) = depth.data().iter().find(|v| !(**v > T::zero())) {
        return Err(AdaptError::Config(format!("depth must be positive, found {bad}")));
    }
    let batch = Batch::<T>::new(&[bundle], supervision, TemporalSources::Both, weights)?;
    let mut d = depth.clone();
    let mut p: Vec<Tensor<T>> = poses.to_vec();
    let mut best: Option<(f64, Tensor<T>, Vec<Tensor<T>>)> = None;
    let mut trace = Vec::new();
    let mut diverged = false;
    let (lo, hi) = (T::c(range.d_min), T::c(range.d_max));
    let step_lr = T::c(lr);
    for step in 0..=steps {
        let want = step < steps;
        let (loss, grads) = match direct_objective(&batch, &d, &p, weights, range, want) {
            Ok(r) => r,
            Err(EngineError::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        trace.push(loss);
        if best.as_ref().is_none_or(|b| loss.total < b.0) {
            best = Some((loss.total, d.clone(), p.clone()));
        }
        let Some((gd, gp)) = grads else { break };
        if !gd.is_finite() || gp.iter().any(|t| !t.is_finite()) {
            diverged = true;
            break;
        }
        for (v, &gv) in d.data_mut().iter_mut().zip(gd.data()) {
            *v -= step_lr * gv;
            *v = if *v < lo { lo } else if *v > hi { hi } else { *v };
        }
        for (t, gt) in p.iter_mut().zip(&gp) {
            for (v, &gv) in t.data_mut().iter_mut().zip(gt.data()) {
                *v -= step_lr * gv;
            }
        }
    }
    if diverged {
        let (_, bd, bp) = best.ok_or_else(|| AdaptError::Engine(EngineError::NonFinite("initial direct loss")))?;
        d = bd;
        p = bp;
    }
    Ok(DirectOutcome {
        depth: d,
        poses: p,
        trace,
        diverged,
    })
}

/// Network predictions that seed [`direct_optimize`]: finest depth and the
/// motion vector of each temporal source, normalization in evaluation mode.
pub fn network_outputs(
    model: &crate::models::Model<f32>,
    bundle: &FrameBundle,
    weights: &LossWeights,
    supervision: Supervision,
) -> Result<(Tensor<f32>, Vec<Tensor<f32>>), AdaptError> {
    let batch = Batch::<f32>::new(&[bundle], supervision, TemporalSources::Both, weights)?;
    let fw = super::objective::forward(model, &batch, weights, crate::autodiff::NormMode::Eval, &|_, _| false)?;
    let depth = fw.depth(model)?;
    let poses = fw.poses.iter().map(|&v| fw.graph.value(v).clone()).collect();
    Ok((depth, poses))
}

//! Builds the self-supervised objective for a batch of frame bundles.

use crate::autodiff::{EngineError, Graph, GroupName, NamedTensors, NormMode, Scalar, Tensor, Var};
use crate::geometry::CameraIntrinsics;
use crate::losses::{image_pyramid, total_loss, LossBreakdown, LossWeights, SourceView};
use crate::models::{depth_forward, disp_to_depth_values, pose_forward, Binding, Model, NormRecord};
use crate::scenes::FrameBundle;
use crate::warp::pose_tensor;

use super::Supervision;

/// Which temporal neighbours serve as source views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalSources {
    /// Previous and next frame, whichever exist.
    Both,
    /// Previous frame only; the next frame stands in when there is none.
    Causal,
}

/// Stacked inputs of one loss evaluation.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub target: Tensor<T>,
    pub pyramid: Vec<Tensor<T>>,
    pub temporal: Vec<Tensor<T>>,
    /// Per temporal source: true when it precedes the target, in which case
    /// the pose network sees (source, target) and its output is negated.
    pub earlier: Vec<bool>,
    /// Stereo partner and the fixed target-to-partner transform.
    pub stereo: Option<(Tensor<T>, Tensor<T>)>,
    pub intrinsics: CameraIntrinsics,
}

fn stack<T: Scalar>(items: Vec<&Tensor<f32>>) -> Result<Tensor<T>, EngineError> {
    let cast: Vec<Tensor<T>> = items.iter().map(|t| t.cast()).collect();
    let refs: Vec<&Tensor<T>> = cast.iter().collect();
    Tensor::stack(&refs)
}

impl<T: Scalar> Batch<T> {
    /// Stacks bundles that share the same available sources.
    pub fn new(
        bundles: &[&FrameBundle],
        supervision: Supervision,
        temporal: TemporalSources,
        weights: &LossWeights,
    ) -> Result<Self, EngineError> {
        let first = *bundles
            .first()
            .ok_or_else(|| EngineError::Shape("empty batch".into()))?;
        let pick = |b: &FrameBundle| -> Vec<(bool, Tensor<f32>)> {
            let prev = b.prev.clone().map(|p| (true, p));
            let next = b.next.clone().map(|p| (false, p));
            match temporal {
                TemporalSources::Both => prev.into_iter().chain(next).collect(),
                TemporalSources::Causal => prev.or(next).into_iter().collect(),
            }
        };
        let mut temporal_sets = Vec::new();
        let mut earlier = Vec::new();
        if supervision.uses_temporal() {
            let per: Vec<Vec<(bool, Tensor<f32>)>> = bundles.iter().map(|b| pick(b)).collect();
            let n = per[0].len();
            let order: Vec<bool> = per[0].iter().map(|p| p.0).collect();
            if n == 0 || per.iter().any(|p| p.iter().map(|q| q.0).ne(order.iter().copied())) {
                return Err(EngineError::Shape(format!(
                    "frame {} lacks temporal neighbours (or batch mixes neighbour counts)",
                    first.index
                )));
            }
            for s in 0..n {
                temporal_sets.push(stack(per.iter().map(|p| &p[s].1).collect())?);
            }
            earlier = order;
        }
        let stereo = if supervision.uses_stereo() {
            let mut images = Vec::new();
            let mut poses = Vec::new();
            for b in bundles {
                match (&b.stereo, b.stereo_from_target) {
                    (Some(img), Some(pose)) => {
                        images.push(img);
                        poses.push(pose);
                    }
                    _ => {
                        return Err(EngineError::Shape(format!("frame {} has no stereo partner", b.index)));
                    }
                }
            }
            Some((stack(images)?, pose_tensor(&poses)?))
        } else {
            None
        };
        let target: Tensor<T> = stack(bundles.iter().map(|b| &b.target).collect())?;
        Ok(Self {
            pyramid: image_pyramid(&target, weights.scales)?,
            target,
            temporal: temporal_sets,
            earlier,
            stereo,
            intrinsics: first.intrinsics,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.target.shape()[0]
    }
}

/// A forward pass through networks and loss, ready for `backward`.
pub struct Forward<T: Scalar> {
    pub graph: Graph<T>,
    pub binding: Binding,
    pub records: Vec<NormRecord>,
    pub breakdown: LossBreakdown,
    pub total: Var,
    /// Finest disparity map (N, 1, H, W).
    pub disparity: Var,
    /// Predicted target-to-source motion per temporal source, (N, 6).
    pub poses: Vec<Var>,
}

/// Runs the depth (and, when needed, pose) networks and the loss.
/// Tensors accepted by `trainable` receive gradients in `backward`.
pub fn forward<T: Scalar>(
    model: &Model<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    mode: NormMode,
    trainable: &dyn Fn(GroupName, &str) -> bool,
) -> Result<Forward<T>, EngineError> {
    forward_in(Graph::new(), model, batch, weights, mode, trainable)
}

/// [`forward`] recorded into a caller-supplied (empty) graph, e.g. one that
/// tracks kink decisions.
pub fn forward_in<T: Scalar>(
    mut g: Graph<T>,
    model: &Model<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    mode: NormMode,
    trainable: &dyn Fn(GroupName, &str) -> bool,
) -> Result<Forward<T>, EngineError> {
    let groups: Vec<GroupName> = if batch.temporal.is_empty() {
        vec![GroupName::DepthEncoder, GroupName::DepthDecoder]
    } else {
        GroupName::ALL.to_vec()
    };
    let binding = Binding::new(&mut g, model, &groups, trainable)?;
    let mut records = Vec::new();
    let target = g.constant(batch.target.clone())?;
    let disps = depth_forward(&mut g, model, &binding, target, mode, &mut records)?;
    let mut sources = Vec::new();
    let mut poses = Vec::new();
    for (src, &earlier) in batch.temporal.iter().zip(&batch.earlier) {
        let image = g.constant(src.clone())?;
        let motion = if earlier {
            let m = pose_forward(&mut g, model, &binding, image, target, mode, &mut records)?;
            g.scale(m, -1.0)?
        } else {
            pose_forward(&mut g, model, &binding, target, image, mode, &mut records)?
        };
        let pose = g.pose_matrix(motion)?;
        poses.push(motion);
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
        &batch.pyramid,
        &sources,
        &disps,
        &model.config.range,
        &batch.intrinsics,
        weights,
    )?;
    Ok(Forward {
        graph: g,
        binding,
        records,
        breakdown: out.breakdown,
        total: out.total,
        disparity: disps[0],
        poses,
    })
}

impl<T: Scalar> Forward<T> {
    /// Metric depth of the finest disparity map.
    pub fn depth(&self, model: &Model<T>) -> Result<Tensor<T>, EngineError> {
        disp_to_depth_values(self.graph.value(self.disparity), &model.config.range)
    }

    /// Back-propagates the total loss; returns gradients per group, keyed
    /// by tensor name, for every gradient-requiring tensor.
    pub fn gradients(&mut self) -> Result<Vec<NamedTensors<T>>, EngineError> {
        let mut grads = self.graph.backward(self.total)?;
        let mut out = vec![NamedTensors::new(); 4];
        for name in GroupName::ALL {
            for (k, &v) in self.binding.group(name) {
                if self.graph.requires_grad(v) {
                    let gt = grads
                        .take(v)
                        .unwrap_or_else(|| Tensor::zeros(self.graph.shape(v)));
                    out[name as usize].insert(k.clone(), gt);
                }
            }
        }
        Ok(out)
    }
}

/// Baseline inference: finest-scale depth (N, 1, H, W) with normalization
/// in evaluation mode.
pub fn predict_depth<T: Scalar>(model: &Model<T>, image: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    let mut g = Graph::new();
    let binding = Binding::new(
        &mut g,
        model,
        &[GroupName::DepthEncoder, GroupName::DepthDecoder],
        &|_, _| false,
    )?;
    let x = g.constant(image.clone())?;
    let mut records = Vec::new();
    let disps = depth_forward(&mut g, model, &binding, x, NormMode::Eval, &mut records)?;
    disp_to_depth_values(g.value(disps[0]), &model.config.range)
}

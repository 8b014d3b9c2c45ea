use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::{forward, Batch, TemporalSources};
use super::{AdaptError, Supervision, TrainConfig};
use crate::autodiff::optim::{adam_step, AdamConfig, AdamState};
use crate::autodiff::{EngineError, GroupName, NormMode};
use crate::losses::{LossBreakdown, LossWeights};
use crate::models::{Checkpoint, Model, ModelConfig, TrainingMeta};
use crate::scenes::FrameBundle;

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    /// Loss of every optimizer step, in order.
    pub steps: Vec<LossBreakdown>,
    /// Mean total loss of each epoch run by this call.
    pub epoch_means: Vec<f64>,
}

fn usable(b: &FrameBundle, supervision: Supervision) -> bool {
    (!supervision.uses_temporal() || (b.prev.is_some() && b.next.is_some()))
        && (!supervision.uses_stereo() || b.stereo.is_some())
}

/// Trains a freshly initialized model.
pub fn train(bundles: &[FrameBundle], model: ModelConfig, cfg: &TrainConfig) -> Result<TrainReport, AdaptError> {
    let init = Model::init(model, cfg.seed).map_err(AdaptError::Config)?;
    train_from(
        Checkpoint {
            model: init,
            meta: TrainingMeta {
                seed: cfg.seed,
                epochs: 0,
                steps: 0,
            },
        },
        bundles,
        cfg,
    )
}

/// Continues training `start` for `cfg.epochs` more epochs. Shuffling is
/// keyed by the absolute epoch number, so resuming is deterministic.
/// Optimizer moments are not persisted and restart from zero.
pub fn train_from(start: Checkpoint, bundles: &[FrameBundle], cfg: &TrainConfig) -> Result<TrainReport, AdaptError> {
    cfg.validate().map_err(AdaptError::Config)?;
    let mut model = start.model;
    let mut meta = start.meta;
    let pool: Vec<&FrameBundle> = bundles.iter().filter(|b| usable(b, cfg.supervision)).collect();
    if cfg.epochs > 0 && pool.is_empty() {
        return Err(AdaptError::Config(
            "no training frame has the neighbours the supervision mode needs".into(),
        ));
    }
    let active: Vec<GroupName> = GroupName::ALL
        .into_iter()
        .filter(|g| cfg.supervision.uses_temporal() || !g.is_pose())
        .collect();
    for g in GroupName::ALL {
        let group = model.group_mut(g);
        group.trainable = active.contains(&g);
        group.norm_stats_frozen = false;
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut states: Vec<AdamState<f32>> = (0..4).map(|_| AdamState::new()).collect();
    let mut steps = Vec::new();
    let mut epoch_means = Vec::new();
    for _ in 0..cfg.epochs {
        let epoch = meta.epochs;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch) {
            let items: Vec<&FrameBundle> = chunk.iter().map(|&i| pool[i]).collect();
            let batch = Batch::<f32>::new(&items, cfg.supervision, TemporalSources::Both, &cfg.weights)?;
            let diverged = |source| match source {
                EngineError::NonFinite(_) => AdaptError::Diverged {
                    epoch,
                    step: meta.steps,
                    source,
                },
                other => AdaptError::Engine(other),
            };
            let mut fw = forward(&model, &batch, &cfg.weights, NormMode::Train, &|g, _| active.contains(&g))
                .map_err(diverged)?;
            let grads = fw.gradients().map_err(diverged)?;
            for &g in &active {
                adam_step(model.group_mut(g), &grads[g as usize], &mut states[g as usize], &adam, &|_| true)?;
            }
            model.update_norm_stats(&fw.graph, &fw.records)?;
            sum += fw.breakdown.total;
            count += 1;
            steps.push(fw.breakdown);
            meta.steps += 1;
        }
        epoch_means.push(sum / count as f64);
        meta.epochs += 1;
    }
    for g in GroupName::ALL {
        let group = model.group_mut(g);
        group.trainable = true;
        group.norm_stats_frozen = false;
    }
    Ok(TrainReport {
        checkpoint: Checkpoint { model, meta },
        steps,
        epoch_means,
    })
}

/// Mean photometric loss of `model` over `bundles`, normalization in
/// evaluation mode.
pub fn validation_loss(
    model: &Model<f32>,
    bundles: &[FrameBundle],
    weights: &LossWeights,
    supervision: Supervision,
) -> Result<f64, AdaptError> {
    let mut sum = 0.0;
    let mut n = 0;
    for b in bundles.iter().filter(|b| usable(b, supervision)) {
        let batch = Batch::<f32>::new(&[b], supervision, TemporalSources::Both, weights)?;
        let fw = forward(model, &batch, weights, NormMode::Eval, &|_, _| false)?;
        sum += fw.breakdown.photometric;
        n += 1;
    }
    if n == 0 {
        return Err(AdaptError::Config("no usable validation frames".into()));
    }
    Ok(sum / n as f64)
}

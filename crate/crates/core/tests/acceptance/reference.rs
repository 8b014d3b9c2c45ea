//! The reference checkpoint shared by the adaptation criteria: the desk
//! profile trained for 20 epochs on a 300-frame corridor set.

use std::sync::OnceLock;
use std::time::Instant;

use adaptdepth::adapt::{predict_depth, train, validation_loss, AdaptOutcome, Supervision, TrainConfig};
use adaptdepth::metrics::{EvalRange, Scaling};
use adaptdepth::scenes::{CorridorRecipe, FrameBundle};
use adaptdepth::{LossWeights, Model, Tensor};

use crate::common::{corridor, interior, Verdict};
use crate::confinement::desk_config;

pub const TRAIN_SEED: u64 = 7;
pub const EPOCHS: usize = 20;
pub const VAL_FRAMES: usize = 200;

pub struct Reference {
    pub model: Model<f32>,
    /// Interior validation frames, disjoint from training.
    pub val: Vec<FrameBundle>,
    /// Baseline abs-rel of each validation frame.
    pub baseline: Vec<f64>,
    pub training: Verdict,
}

static REFERENCE: OnceLock<Reference> = OnceLock::new();

pub fn abs_rel(depth: &Tensor<f32>, bundle: &FrameBundle) -> f64 {
    let gt = bundle.depth.as_ref().expect("ground truth");
    adaptdepth::adapt::evaluate_depth(depth, gt, Scaling::Median, &EvalRange::default())
        .unwrap()
        .abs_rel
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn outcome_abs_rel(outcomes: &[AdaptOutcome], bundles: &[FrameBundle]) -> Vec<f64> {
    outcomes.iter().zip(bundles).map(|(o, b)| abs_rel(&o.depth, b)).collect()
}

fn build() -> Reference {
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let mut recipe = CorridorRecipe::new(1, 96, 32, 300);
    recipe.segment_frames = 50;
    let train_set = corridor(&recipe, &root.path().join("train"));
    let mut recipe = CorridorRecipe::new(2, 96, 32, 220);
    recipe.segment_frames = 55;
    let val: Vec<FrameBundle> = interior(corridor(&recipe, &root.path().join("val")))
        .into_iter()
        .take(VAL_FRAMES)
        .collect();
    assert_eq!(val.len(), VAL_FRAMES);

    let cfg = TrainConfig {
        epochs: EPOCHS,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let model = train(&train_set, desk_config(), &cfg).unwrap().checkpoint.model;
    let init = Model::<f32>::init(desk_config(), TRAIN_SEED).unwrap();
    let weights = LossWeights::default();
    let before = validation_loss(&init, &val, &weights, Supervision::Mono).unwrap();
    let after = validation_loss(&model, &val, &weights, Supervision::Mono).unwrap();
    let baseline: Vec<f64> = val
        .iter()
        .map(|b| abs_rel(&predict_depth(&model, &b.target).unwrap(), b))
        .collect();

    let mut training = Verdict::default();
    let base = mean(&baseline);
    training.check("validation abs-rel below 0.30", base < 0.30, format!("{base:.4}"));
    let ratio = before / after;
    training.check(
        "validation photometric loss at least 5x below initialization",
        ratio >= 5.0,
        format!("{before:.4} -> {after:.4}, ratio {ratio:.2}"),
    );
    training.check(
        "training time",
        true,
        format!("{:.0}s for {EPOCHS} epochs on {} frames", start.elapsed().as_secs_f64(), train_set.len()),
    );
    Reference {
        model,
        val,
        baseline,
        training,
    }
}

pub fn get() -> &'static Reference {
    REFERENCE.get_or_init(build)
}

/// The training postconditions of the reference run, reported alongside
/// the criteria.
pub fn training() -> Verdict {
    get().training.clone()
}

use adaptdepth::adapt::{
    adapt_instance, adapt_sequential, predict_depth, train, AdaptConfig, AdaptError, AdaptMode, ComponentMask,
    Supervision, TrainConfig,
};
use adaptdepth::scenes::{generate_dataset, load_sequence, CorridorRecipe, FrameBundle, LoadOptions};
use adaptdepth::{Model, ModelConfig};

fn small() -> ModelConfig {
    ModelConfig {
        width: 32,
        height: 16,
        encoder_widths: [4, 4, 8, 8],
        decoder_widths: [4, 4, 8, 8],
        pose_hidden: 8,
        ..ModelConfig::default()
    }
}

fn sequence(seed: u64, frames: usize) -> Vec<FrameBundle> {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let recipe = CorridorRecipe::new(seed, cfg.width, cfg.height, frames);
    generate_dataset(&recipe.build().unwrap(), dir.path()).unwrap();
    load_sequence(dir.path(), &LoadOptions::default())
        .unwrap()
        .into_iter()
        .filter(|b| b.prev.is_some() && b.next.is_some())
        .collect()
}

fn config(steps: usize, lr: f64) -> AdaptConfig {
    AdaptConfig {
        steps,
        lr,
        ..AdaptConfig::instance()
    }
}

#[test]
fn zero_steps_reproduce_the_baseline() {
    let model = Model::<f32>::init(small(), 1).unwrap();
    let b = &sequence(1, 3)[0];
    let out = adapt_instance(&model, b, &config(0, 0.1)).unwrap();
    assert_eq!(out.depth, predict_depth(&model, &b.target).unwrap());
    assert_eq!(out.gradient_steps, 0);
    assert!(!out.diverged);
    // Disabled adaptation ignores the learning rate.
    let off = adapt_instance(&model, b, &AdaptConfig { lr: 0.0, ..AdaptConfig::off() }).unwrap();
    assert_eq!(off.depth, out.depth);
}

#[test]
fn trace_records_every_step() {
    let model = Model::<f32>::init(small(), 2).unwrap();
    let b = &sequence(2, 3)[0];
    let out = adapt_instance(&model, b, &config(4, 1e-2)).unwrap();
    assert_eq!(out.gradient_steps, 4);
    assert_eq!(out.trace.len(), 5);
    assert!(out.trace.iter().all(|t| t.total.is_finite() && (0.0..=1.0).contains(&t.mask_ratio)));
}

#[test]
fn divergence_returns_the_best_snapshot() {
    let model = Model::<f32>::init(small(), 3).unwrap();
    let b = &sequence(3, 3)[0];
    let cfg = AdaptConfig {
        mask: ComponentMask::whole_network(),
        ..config(20, 1e12)
    };
    let out = adapt_instance(&model, b, &cfg).unwrap();
    assert!(out.diverged, "{:?}", out.trace);
    assert!(out.depth.data().iter().all(|d| d.is_finite() && *d > 0.0));
    assert!(out.trace.iter().all(|t| t.total.is_finite()));
    assert!(out.gradient_steps < 20);
}

#[test]
fn sequential_on_one_frame_matches_instance() {
    let cfg = small();
    let model = Model::<f32>::init(cfg.clone(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&CorridorRecipe::new(4, cfg.width, cfg.height, 3).build().unwrap(), dir.path()).unwrap();
    // The opening frame has a single neighbour, which both modes then use.
    let first = load_sequence(dir.path(), &LoadOptions::default()).unwrap().remove(0);
    assert!(first.prev.is_none());
    let cfg = config(5, 0.05);
    let inst = adapt_instance(&model, &first, &cfg).unwrap();
    let seq = adapt_sequential(
        &model,
        std::slice::from_ref(&first),
        &AdaptConfig {
            mode: AdaptMode::Sequential,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(seq.frames.len(), 1);
    assert_eq!(seq.frames[0].depth, inst.depth);
    assert_eq!(seq.frames[0].trace, inst.trace);
    assert_eq!(seq.gradient_steps, inst.gradient_steps);
}

#[test]
fn sequential_carries_weights_forward() {
    let model = Model::<f32>::init(small(), 5).unwrap();
    let b = sequence(5, 5);
    let cfg = AdaptConfig::sequential();
    let seq = adapt_sequential(&model, &b, &cfg).unwrap();
    assert_eq!(seq.gradient_steps, 5 * b.len());
    // The second frame starts from the weights left by the first.
    let fresh = adapt_instance(&model, &b[1], &AdaptConfig { steps: 5, ..AdaptConfig::instance() }).unwrap();
    assert_ne!(seq.frames[1].depth, fresh.depth);
    assert_eq!(seq.trace.len(), b.len() * 6);
}

/// Share of 10-step traces at `lr` whose total loss never rises.
fn monotone_share(model: &Model<f32>, frames: &[FrameBundle], lr: f64) -> f64 {
    let monotone = frames
        .iter()
        .filter(|b| {
            let out = adapt_instance(model, b, &config(10, lr)).unwrap();
            out.trace.windows(2).all(|w| w[1].total <= w[0].total)
        })
        .count();
    monotone as f64 / frames.len() as f64
}

#[test]
fn small_learning_rates_decrease_the_loss() {
    let cfg = small();
    let trained = train(
        &sequence(12, 60),
        cfg,
        &TrainConfig {
            epochs: 5,
            seed: 6,
            lr: 1e-3,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .checkpoint
    .model;
    let frames = sequence(6, 22);
    for lr in [1e-3, 1e-4] {
        let share = monotone_share(&trained, &frames, lr);
        assert!(share >= 0.95, "lr {lr}: {:.0}% of {} traces non-increasing", 100.0 * share, frames.len());
    }
}

#[test]
fn static_scenes_are_fully_masked() {
    let model = Model::<f32>::init(small(), 7).unwrap();
    let mut b = sequence(7, 3).remove(0);
    b.prev = Some(b.target.clone());
    b.next = Some(b.target.clone());
    let out = adapt_instance(&model, &b, &config(3, 0.1)).unwrap();
    assert!(out.trace.iter().all(|t| t.mask_ratio == 0.0 && t.photometric == 0.0));
}

#[test]
fn zero_epochs_return_the_initialization() {
    let cfg = small();
    let frames = sequence(8, 4);
    let report = train(
        &frames,
        cfg.clone(),
        &TrainConfig {
            epochs: 0,
            seed: 11,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(report.checkpoint.model, Model::init(cfg, 11).unwrap());
}

#[test]
fn training_is_reproducible_and_lowers_the_loss() {
    let cfg = small();
    let frames = sequence(9, 10);
    let tc = TrainConfig {
        epochs: 3,
        seed: 2,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let a = train(&frames, cfg.clone(), &tc).unwrap();
    let b = train(&frames, cfg, &tc).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.checkpoint.meta.epochs, 3);
    assert_eq!(a.epoch_means.len(), 3);
    assert!(a.epoch_means[2] < a.epoch_means[0], "{:?}", a.epoch_means);
}

#[test]
fn invalid_configs_are_rejected() {
    let model = Model::<f32>::init(small(), 1).unwrap();
    let b = &sequence(10, 3)[0];
    for cfg in [
        config(5, -1.0),
        config(5, f64::NAN),
        AdaptConfig {
            mask: ComponentMask::groups(&[]),
            ..config(5, 0.1)
        },
    ] {
        assert!(matches!(adapt_instance(&model, b, &cfg), Err(AdaptError::Config(_))), "{cfg:?}");
    }
    // Stereo supervision needs a right view.
    let stereo = AdaptConfig {
        supervision: Supervision::Stereo,
        ..config(2, 0.1)
    };
    assert!(adapt_instance(&model, b, &stereo).is_err());
}

#[test]
fn configs_round_trip_through_json() {
    for cfg in [AdaptConfig::instance(), AdaptConfig::sequential(), AdaptConfig::off()] {
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<AdaptConfig>(&text).unwrap(), cfg);
    }
    assert!(serde_json::from_str::<AdaptConfig>(r#"{"mode":"instance","steps":1,"lr":1,"mask":["encoders"],"supervision":"mono","bogus":1}"#).is_err());
}


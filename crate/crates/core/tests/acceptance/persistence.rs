//! Metrics fixture, determinism and checkpoint persistence.

use std::fs;
use std::path::Path;

use adaptdepth::adapt::{ablation_grid, train, AdaptConfig, ComponentMask, GridConfig, TrainConfig};
use adaptdepth::metrics::{evaluate_map, EvalRange, Scaling};
use adaptdepth::models::{load_checkpoint, save_checkpoint};
use adaptdepth::scenes::CorridorRecipe;
use adaptdepth::ModelConfig;
use serde::Deserialize;

use crate::common::{corridor, Verdict};

#[derive(Deserialize)]
struct Fixture {
    pred: Vec<f64>,
    gt: Vec<f64>,
    height: usize,
    width: usize,
    expected: adaptdepth::metrics::DepthMetrics,
}

pub fn metrics_fixture() -> Verdict {
    let mut v = Verdict::default();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metrics_2x2.json");
    let f: Fixture = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let m = evaluate_map(&f.pred, &f.gt, f.height, f.width, Scaling::None, &EvalRange::default()).unwrap();
    v.check(
        "abs_rel and delta1 reproduced exactly",
        m.abs_rel == 0.3 && m.delta1 == 0.5 && m.abs_rel == f.expected.abs_rel && m.delta1 == f.expected.delta1,
        format!("abs_rel {}, delta1 {}", m.abs_rel, m.delta1),
    );
    let worst = m
        .as_array()
        .iter()
        .zip(f.expected.as_array())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    v.check(
        "remaining metrics match the hand computation",
        worst < 1e-15,
        format!("max deviation {worst:e} ({})", m.csv_row()),
    );
    v
}

fn tiny() -> ModelConfig {
    ModelConfig {
        width: 64,
        height: 32,
        encoder_widths: [4, 4, 8, 8],
        decoder_widths: [4, 4, 8, 8],
        pose_hidden: 8,
        ..ModelConfig::default()
    }
}

pub fn determinism() -> Verdict {
    let mut v = Verdict::default();
    let dir = tempfile::tempdir().unwrap();
    let mut recipe = CorridorRecipe::new(51, 64, 32, 12);
    recipe.segment_frames = 6;
    let a = corridor(&recipe, &dir.path().join("a"));
    let b = corridor(&recipe, &dir.path().join("b"));
    let same_data = a.iter().zip(&b).all(|(x, y)| x.target == y.target && x.depth == y.depth);
    v.check("same recipe renders identical frames", same_data && a.len() == b.len(), format!("{} frames", a.len()));

    let cfg = TrainConfig {
        epochs: 2,
        batch: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let first = train(&a, tiny(), &cfg).unwrap().checkpoint;
    let second = train(&b, tiny(), &cfg).unwrap().checkpoint;
    let other = train(&a, tiny(), &TrainConfig { seed: 10, ..cfg.clone() }).unwrap().checkpoint;
    v.check(
        "same seed gives bit-identical checkpoints",
        first.to_bytes() == second.to_bytes(),
        format!("{} bytes", first.to_bytes().len()),
    );
    v.check("a different seed gives a different checkpoint", first.to_bytes() != other.to_bytes(), "");

    let path = dir.path().join("ckpt.bin");
    save_checkpoint(&path, &first).unwrap();
    let on_disk = fs::read(&path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let again = dir.path().join("again.bin");
    save_checkpoint(&again, &loaded).unwrap();
    v.check(
        "save, load, save round trip is byte-identical",
        loaded == first && fs::read(&again).unwrap() == on_disk && on_disk == first.to_bytes(),
        format!("{} bytes", on_disk.len()),
    );

    let grid = [
        GridConfig {
            mask: ComponentMask::encoders(),
            lr: 0.0,
            steps: 0,
        },
        GridConfig {
            mask: ComponentMask::encoders(),
            lr: 0.1,
            steps: 3,
        },
        GridConfig {
            mask: ComponentMask::whole_network(),
            lr: 0.1,
            steps: 3,
        },
    ];
    let csv = |jobs| -> String {
        let template = AdaptConfig::instance();
        ablation_grid(&loaded.model, &a[1..5], &grid, &template, Scaling::Median, jobs)
            .iter()
            .map(|r| r.csv_row() + "\n")
            .collect()
    };
    let (one, two, threaded) = (csv(1), csv(1), csv(2));
    v.check(
        "metrics CSV identical across runs and thread counts",
        one == two && one == threaded && !one.contains("error"),
        format!("{} rows", one.lines().count()),
    );
    v
}

//! Fixtures shared by the benchmarks.

use adaptdepth::scenes::{render, CorridorRecipe, FrameBundle};
use adaptdepth::ModelConfig;

/// The desk profile used by the acceptance runs.
pub fn desk_config() -> ModelConfig {
    ModelConfig {
        width: 96,
        height: 32,
        encoder_widths: [8, 16, 32, 64],
        decoder_widths: [8, 16, 32, 64],
        pose_hidden: 32,
        ..ModelConfig::default()
    }
}

/// Frame 1 of a short corridor with both neighbours, rendered in memory.
pub fn corridor_bundle(width: usize, height: usize) -> FrameBundle {
    let spec = CorridorRecipe::new(5, width, height, 3).build().expect("recipe");
    let frame = |i| render(&spec, i).expect("frame in range");
    let target = frame(1);
    FrameBundle {
        index: 1,
        target: target.image,
        prev: Some(frame(0).image),
        next: Some(frame(2).image),
        stereo: None,
        intrinsics: spec.intrinsics,
        depth: Some(target.depth),
        prev_from_target: None,
        next_from_target: None,
        stereo_from_target: None,
    }
}

//! Procedural ground-truth scenes and the on-disk sequence layout.

mod dataset;
mod render;
mod scene;
mod texture;

pub use dataset::{
    frame_name, generate_dataset, level_to_value, load_sequence, read_depth, read_ppm, write_depth, write_ppm,
    Dataset, DatasetError, DatasetManifest, Frame, FrameBundle, LoadOptions, Split, Splits, DEPTH_MAGIC,
    STATIONARY_THRESHOLD,
};
pub use render::{quantize, render, render_right, visibility_mask, RenderedFrame, BACKGROUND_DEPTH};
pub use scene::{box_quads, fronto_parallel_scene, CorridorRecipe, MovingObject, Quad, SceneSpec, Segment};
pub use texture::Texture;

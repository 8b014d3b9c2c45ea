//! Self-supervised monocular depth estimation with test-time adaptation.

pub mod adapt;
pub mod autodiff;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod scenes;
pub mod warp;

pub use autodiff::{EngineError, GroupName, ParameterGroup, Scalar, Tensor};
pub use geometry::{CameraIntrinsics, Pose, PoseVector};
pub use losses::{LossBreakdown, LossWeights};
pub use models::{Checkpoint, DepthRange, Model, ModelConfig};

//! Differentiable view synthesis by inverse warping.
//!
//! All tensors are batched: images (N, C, H, W), depth (N, 1, H, W),
//! poses (N, 3, 4) matrices or (N, 6) vectors, grids (N, 2, H, W).

use crate::autodiff::{EngineError, Graph, Scalar, Tensor, Var};
use crate::geometry::{identity_grid, CameraIntrinsics, Pose};

/// Bilinear sample with clamp-to-edge borders.
pub fn bilinear_sample<T: Scalar>(g: &mut Graph<T>, image: Var, grid: Var) -> Result<Var, EngineError> {
    g.grid_sample(image, grid)
}

/// Synthesizes the target view from `source` given target depth and the
/// target-to-source transform.
pub fn warp<T: Scalar>(
    g: &mut Graph<T>,
    source: Var,
    depth: Var,
    target_to_source: Var,
    k: &CameraIntrinsics,
) -> Result<Var, EngineError> {
    let grid = g.project_depth(depth, target_to_source, k.projection_params())?;
    g.grid_sample(source, grid)
}

/// Constant (N, 3, 4) pose tensor.
pub fn pose_tensor<T: Scalar>(poses: &[Pose]) -> Result<Tensor<T>, EngineError> {
    let data = poses
        .iter()
        .flat_map(|p| p.matrix_rows())
        .map(T::c)
        .collect();
    Tensor::from_vec(&[poses.len(), 3, 4], data)
}

/// Identity sampling grid for a batch of `n` images.
pub fn identity_grid_batch<T: Scalar>(n: usize, width: usize, height: usize) -> Tensor<T> {
    let one = identity_grid(width, height).cast::<T>();
    let mut data = Vec::with_capacity(n * one.len());
    for _ in 0..n {
        data.extend_from_slice(one.data());
    }
    Tensor::from_vec(&[n, 2, height, width], data).expect("grid shape")
}

/// Non-differentiable convenience: warp one (1, C, H, W) image.
pub fn warp_image<T: Scalar>(
    source: &Tensor<T>,
    depth: &Tensor<T>,
    target_to_source: &Pose,
    k: &CameraIntrinsics,
) -> Result<Tensor<T>, EngineError> {
    let mut g = Graph::new();
    let s = g.constant(source.clone())?;
    let d = g.constant(depth.clone())?;
    let p = g.constant(pose_tensor(&[*target_to_source])?)?;
    let out = warp(&mut g, s, d, p, k)?;
    Ok(g.value(out).clone())
}

/// Non-differentiable bilinear sampling of one batch.
pub fn sample_image<T: Scalar>(image: &Tensor<T>, grid: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    let mut g = Graph::new();
    let i = g.constant(image.clone())?;
    let q = g.constant(grid.clone())?;
    let out = g.grid_sample(i, q)?;
    Ok(g.value(out).clone())
}

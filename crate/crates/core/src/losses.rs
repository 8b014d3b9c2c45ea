//! Self-supervised objective: masked per-pixel-minimum photometric error
//! plus edge-aware disparity smoothness, averaged over scales.

use serde::{Deserialize, Serialize};

use crate::autodiff::{EngineError, Graph, Scalar, Tensor, Var};
use crate::geometry::CameraIntrinsics;
use crate::models::{disp_to_depth, DepthRange};
use crate::warp::warp;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_smooth: f64,
    pub scales: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.85,
            lambda_smooth: 1e-3,
            scales: 2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.alpha >= 0.0 && self.lambda_smooth >= 0.0) {
            return Err("alpha and lambda_smooth must be non-negative".into());
        }
        if self.scales == 0 {
            return Err("at least one scale is required".into());
        }
        Ok(())
    }
}

/// Scalar summary of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    /// Fraction of pixels kept by the auto-mask.
    pub mask_ratio: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,total,photometric,smoothness,mask_ratio";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{}",
            self.total, self.photometric, self.smoothness, self.mask_ratio
        )
    }
}

/// Per-pixel SSIM of two (N, C, H, W) images over 3×3 reflection-padded
/// windows.
pub fn ssim<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var, EngineError> {
    if g.shape(x) != g.shape(y) {
        return Err(EngineError::Shape(format!(
            "ssim inputs {:?} vs {:?}",
            g.shape(x),
            g.shape(y)
        )));
    }
    let xp = g.reflect_pad(x, 1)?;
    let yp = g.reflect_pad(y, 1)?;
    let mu_x = g.avg_pool3(xp)?;
    let mu_y = g.avg_pool3(yp)?;
    let xx = g.mul(xp, xp)?;
    let yy = g.mul(yp, yp)?;
    let xy = g.mul(xp, yp)?;
    let ex2 = g.avg_pool3(xx)?;
    let ey2 = g.avg_pool3(yy)?;
    let exy = g.avg_pool3(xy)?;
    let mx2 = g.mul(mu_x, mu_x)?;
    let my2 = g.mul(mu_y, mu_y)?;
    let mxy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(ex2, mx2)?;
    let var_y = g.sub(ey2, my2)?;
    let cov = g.sub(exy, mxy)?;

    let n1 = g.scale(mxy, 2.0)?;
    let n1 = g.add_scalar(n1, SSIM_C1)?;
    let n2 = g.scale(cov, 2.0)?;
    let n2 = g.add_scalar(n2, SSIM_C2)?;
    let num = g.mul(n1, n2)?;
    let d1 = g.add(mx2, my2)?;
    let d1 = g.add_scalar(d1, SSIM_C1)?;
    let d2 = g.add(var_x, var_y)?;
    let d2 = g.add_scalar(d2, SSIM_C2)?;
    let den = g.mul(d1, d2)?;
    g.div(num, den)
}

/// `β·(1 − SSIM)/2 + (1 − β)·mean_C|p − q|`, shape (N, 1, H, W).
pub fn photometric_pe<T: Scalar>(g: &mut Graph<T>, p: Var, q: Var, beta: f64) -> Result<Var, EngineError> {
    let diff = g.sub(p, q)?;
    let l1 = g.abs(diff)?;
    let l1 = g.mean_axes(l1, &[1])?;
    if beta == 0.0 {
        return Ok(l1);
    }
    let s = ssim(g, p, q)?;
    let s = g.mean_axes(s, &[1])?;
    // β(1 − s)/2 = β/2 − (β/2)s
    let dssim = g.scale(s, -beta / 2.0)?;
    let dssim = g.add_scalar(dssim, beta / 2.0)?;
    if beta == 1.0 {
        return Ok(dssim);
    }
    let l1 = g.scale(l1, 1.0 - beta)?;
    g.add(dssim, l1)
}

/// Per-pixel minimum over equally shaped (N, 1, H, W) error maps; ties go
/// to the earliest map.
pub fn min_reprojection<T: Scalar>(g: &mut Graph<T>, maps: &[Var]) -> Result<Var, EngineError> {
    match maps {
        [] => Err(EngineError::Shape("min_reprojection of no maps".into())),
        [one] => Ok(*one),
        _ => {
            let stacked = g.concat(maps, 1)?;
            g.min_channels(stacked)
        }
    }
}

/// Iverson bracket `[warped < identity]` as a {0, 1} tensor.
pub fn auto_mask<T: Scalar>(g: &Graph<T>, warped_min: Var, identity_min: Var) -> Result<Tensor<T>, EngineError> {
    g.value(warped_min).zip_map(g.value(identity_min), |w, i| {
        if w < i {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Edge-aware smoothness of mean-normalized disparity. `image` is taken as
/// a constant at the disparity's resolution.
pub fn smoothness<T: Scalar>(
    g: &mut Graph<T>,
    disp: Var,
    image: &Tensor<T>,
    lambda: f64,
) -> Result<Var, EngineError> {
    let (n, _, h, w) = g.value(disp).dims4()?;
    let (ni, _, hi, wi) = image.dims4()?;
    if (ni, hi, wi) != (n, h, w) {
        return Err(EngineError::Shape(format!(
            "smoothness disparity {:?} vs image {:?}",
            g.shape(disp),
            image.shape()
        )));
    }
    let mean = g.mean_axes(disp, &[2, 3])?;
    let norm = g.div(disp, mean)?;
    let mut terms = Vec::new();
    for axis in [3usize, 2] {
        let len = if axis == 3 { w } else { h };
        if len < 2 {
            continue;
        }
        let a = g.narrow(norm, axis, 1, len - 1)?;
        let b = g.narrow(norm, axis, 0, len - 1)?;
        let d = g.sub(a, b)?;
        let d = g.abs(d)?;
        let weight = edge_weights(image, axis)?;
        let wv = g.constant(weight)?;
        let t = g.mul(d, wv)?;
        terms.push(g.mean(t)?);
    }
    let sum = match terms[..] {
        [a, b] => g.add(a, b)?,
        [a] => a,
        _ => g.constant(Tensor::scalar(T::zero()))?,
    };
    g.scale(sum, lambda)
}

/// `exp(−mean_C |∂I|)` with forward differences along `axis` (2 or 3).
fn edge_weights<T: Scalar>(image: &Tensor<T>, axis: usize) -> Result<Tensor<T>, EngineError> {
    let (n, c, h, w) = image.dims4()?;
    let (ho, wo) = if axis == 3 { (h, w - 1) } else { (h - 1, w) };
    let d = image.data();
    let mut out = vec![T::zero(); n * ho * wo];
    let inv_c = T::c(1.0 / c as f64);
    for s in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = T::zero();
                for ch in 0..c {
                    let base = ((s * c + ch) * h + y) * w + x;
                    let next = if axis == 3 { base + 1 } else { base + w };
                    acc += (d[next] - d[base]).abs();
                }
                out[(s * ho + y) * wo + x] = (-(acc * inv_c)).exp();
            }
        }
    }
    Tensor::from_vec(&[n, 1, ho, wo], out)
}

/// 2×2 box-filter downsampling of an (N, C, H, W) tensor.
pub fn downsample2<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    let (n, c, h, w) = image.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(EngineError::Shape(format!("cannot halve {h}x{w}")));
    }
    let d = image.data();
    let q = T::c(0.25);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let plane = &d[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for x in 0..wo {
                let i = 2 * y * w + 2 * x;
                out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * q);
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

/// One source view of the target: its image and the target-to-source
/// transform as an (N, 3, 4) node.
#[derive(Clone, Copy, Debug)]
pub struct SourceView {
    pub image: Var,
    pub pose: Var,
}

/// Graph nodes and diagnostics of a full loss evaluation.
pub struct LossOutput<T> {
    pub total: Var,
    pub photometric: Var,
    pub smoothness: Var,
    pub breakdown: LossBreakdown,
    /// Auto-mask of each scale, (N, 1, H, W) at full resolution.
    pub masks: Vec<Tensor<T>>,
}

/// Full objective.
///
/// `disparities[s]` is the disparity at scale `s` (resolution halved `s`
/// times); `target_pyramid[s]` is the target image at that resolution.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    target: Var,
    target_pyramid: &[Tensor<T>],
    sources: &[SourceView],
    disparities: &[Var],
    range: &DepthRange,
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<LossOutput<T>, EngineError> {
    if disparities.is_empty() || disparities.len() < weights.scales || target_pyramid.len() < weights.scales {
        return Err(EngineError::Shape(format!(
            "{} disparity maps and {} pyramid levels for {} scales",
            disparities.len(),
            target_pyramid.len(),
            weights.scales
        )));
    }
    if sources.is_empty() {
        return Err(EngineError::Shape("loss needs at least one source view".into()));
    }
    let mut identity = Vec::with_capacity(sources.len());
    for s in sources {
        identity.push(photometric_pe(g, target, s.image, weights.beta)?);
    }
    let identity_min = min_reprojection(g, &identity)?;

    let mut photo_terms = Vec::new();
    let mut smooth_terms = Vec::new();
    let mut masks = Vec::new();
    let mut mask_ratio = 0.0;
    for scale in 0..weights.scales {
        let disp = disparities[scale];
        let mut full = disp;
        for _ in 0..scale {
            full = g.upsample2(full)?;
        }
        let depth = disp_to_depth(g, full, range)?;
        let mut reproj = Vec::with_capacity(sources.len());
        for s in sources {
            let warped = warp(g, s.image, depth, s.pose, k)?;
            reproj.push(photometric_pe(g, target, warped, weights.beta)?);
        }
        let warped_min = min_reprojection(g, &reproj)?;
        let mask = auto_mask(g, warped_min, identity_min)?;
        g.record_decisions(mask.data().iter().map(|&m| m > T::zero()));
        mask_ratio += mask.mean().f64();
        let mv = g.constant(mask.clone())?;
        let masked = g.mul(warped_min, mv)?;
        photo_terms.push(g.mean(masked)?);
        smooth_terms.push(smoothness(g, disp, &target_pyramid[scale], weights.lambda_smooth)?);
        masks.push(mask);
    }
    let inv = 1.0 / weights.scales as f64;
    let photometric = sum_scaled(g, &photo_terms, inv)?;
    let smooth = sum_scaled(g, &smooth_terms, inv)?;
    let weighted = g.scale(photometric, weights.alpha)?;
    let total = g.add(weighted, smooth)?;
    let breakdown = LossBreakdown {
        total: g.value(total).data()[0].f64(),
        photometric: g.value(photometric).data()[0].f64(),
        smoothness: g.value(smooth).data()[0].f64(),
        mask_ratio: mask_ratio * inv,
    };
    Ok(LossOutput {
        total,
        photometric,
        smoothness: smooth,
        breakdown,
        masks,
    })
}

fn sum_scaled<T: Scalar>(g: &mut Graph<T>, terms: &[Var], s: f64) -> Result<Var, EngineError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, s)
}

/// Target image at each loss scale, finest first.
pub fn image_pyramid<T: Scalar>(image: &Tensor<T>, scales: usize) -> Result<Vec<Tensor<T>>, EngineError> {
    let mut out = vec![image.clone()];
    for _ in 1..scales {
        let next = downsample2(out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

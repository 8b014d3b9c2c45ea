//! Pinhole camera model and rigid-body pose algebra.

use serde::{Deserialize, Serialize};

use crate::autodiff::{rodrigues, ProjectionParams, Tensor};

/// Lower bound on camera-frame depth before the projective division.
pub const Z_MIN: f64 = 1e-3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("depth must be positive, found {0} at index {1}")]
    NonPositiveDepth(f64, usize),
    #[error("shape error: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the field-of-view proportions of a typical driving
    /// dataset camera, principal point at the image center.
    pub fn driving(width: usize, height: usize) -> Self {
        Self {
            fx: 0.58 * width as f64,
            fy: 1.92 * height as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.width >= 2
            && self.height >= 2;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::Intrinsics(format!("{self:?}")))
        }
    }

    /// Intrinsics of the same camera at an image downsampled by `factor`,
    /// keeping integer pixel centers consistent.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + 0.5) / f - 0.5,
            cy: (self.cy + 0.5) / f - 0.5,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn projection_params(&self) -> ProjectionParams {
        ProjectionParams {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            z_min: Z_MIN,
        }
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        let t = self.apply(other.translation);
        Pose {
            rotation: r,
            translation: t,
        }
    }

    /// Row-major `[R | t]`, twelve values.
    pub fn matrix_rows(&self) -> [f64; 12] {
        let mut m = [0.0; 12];
        for i in 0..3 {
            m[i * 4..i * 4 + 3].copy_from_slice(&self.rotation[i]);
            m[i * 4 + 3] = self.translation[i];
        }
        m
    }

    /// Largest deviation of `RᵀR` from the identity, and of det R from 1.
    pub fn rotation_residual(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - e).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst.max((det - 1.0).abs())
    }

    /// Axis-angle and translation of this pose (inverse of
    /// [`pose_vec_to_pose`] for rotations below π).
    pub fn to_vector(&self) -> PoseVector {
        let r = &self.rotation;
        let cos = ((r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
        let theta = cos.acos();
        let v = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
        let s = if theta < 1e-7 {
            0.5
        } else {
            theta / (2.0 * theta.sin())
        };
        PoseVector {
            axis_angle: [v[0] * s, v[1] * s, v[2] * s],
            translation: self.translation,
        }
    }
}

/// Axis-angle rotation plus translation: the pose network's output format.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseVector {
    pub axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseVector {
    pub fn to_array(&self) -> [f64; 6] {
        let (a, t) = (self.axis_angle, self.translation);
        [a[0], a[1], a[2], t[0], t[1], t[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            axis_angle: [v[0], v[1], v[2]],
            translation: [v[3], v[4], v[5]],
        }
    }
}

pub fn pose_vec_to_pose(v: &PoseVector) -> Pose {
    Pose {
        rotation: rodrigues(v.axis_angle),
        translation: v.translation,
    }
}

pub fn invert_pose(t: &Pose) -> Pose {
    let r = &t.rotation;
    let mut rt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rt[i][j] = r[j][i];
        }
    }
    let tt = t.translation;
    let mut ti = [0.0; 3];
    for i in 0..3 {
        ti[i] = -(rt[i][0] * tt[0] + rt[i][1] * tt[1] + rt[i][2] * tt[2]);
    }
    Pose {
        rotation: rt,
        translation: ti,
    }
}

/// Homogeneous pixel coordinates `(u, v, 1)` laid out as (3, H, W).
pub fn pixel_grid(width: usize, height: usize) -> Result<Tensor<f64>, GeometryError> {
    if width < 2 || height < 2 {
        return Err(GeometryError::Shape(format!("grid {width}x{height}")));
    }
    let hw = width * height;
    Ok(Tensor::from_fn(&[3, height, width], |i| {
        let (c, p) = (i / hw, i % hw);
        match c {
            0 => (p % width) as f64,
            1 => (p / width) as f64,
            _ => 1.0,
        }
    }))
}

/// Camera-frame points (3, H, W) of a (1, H, W) depth map.
pub fn backproject(depth: &Tensor<f64>, k: &CameraIntrinsics) -> Result<Tensor<f64>, GeometryError> {
    let (h, w) = plane_dims(depth, k)?;
    if let Some((i, &d)) = depth.data().iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        return Err(GeometryError::NonPositiveDepth(d, i));
    }
    let hw = h * w;
    let d = depth.data();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / hw, i % hw);
        let z = d[p];
        match c {
            0 => z * ((p % w) as f64 - k.cx) / k.fx,
            1 => z * ((p / w) as f64 - k.cy) / k.fy,
            _ => z,
        }
    }))
}

pub fn transform_points(t: &Pose, pts: &Tensor<f64>) -> Result<Tensor<f64>, GeometryError> {
    let hw = points_len(pts)?;
    let d = pts.data();
    let mut out = vec![0.0; 3 * hw];
    for p in 0..hw {
        let q = t.apply([d[p], d[hw + p], d[2 * hw + p]]);
        for c in 0..3 {
            out[c * hw + p] = q[c];
        }
    }
    Tensor::from_vec(pts.shape(), out).map_err(|e| GeometryError::Shape(e.to_string()))
}

/// Normalized sampling coordinates (2, H, W) of camera-frame points.
pub fn project(pts: &Tensor<f64>, k: &CameraIntrinsics) -> Result<Tensor<f64>, GeometryError> {
    let hw = points_len(pts)?;
    let d = pts.data();
    let mut out = vec![0.0; 2 * hw];
    for p in 0..hw {
        let z = d[2 * hw + p].max(Z_MIN);
        let u = k.fx * d[p] / z + k.cx;
        let v = k.fy * d[hw + p] / z + k.cy;
        out[p] = 2.0 * u / (k.width - 1) as f64 - 1.0;
        out[hw + p] = 2.0 * v / (k.height - 1) as f64 - 1.0;
    }
    let s = pts.shape();
    Tensor::from_vec(&[2, s[1], s[2]], out).map_err(|e| GeometryError::Shape(e.to_string()))
}

/// The sampling grid that reproduces the image unchanged, (2, H, W).
pub fn identity_grid(width: usize, height: usize) -> Tensor<f64> {
    let hw = width * height;
    Tensor::from_fn(&[2, height, width], |i| {
        let (c, p) = (i / hw, i % hw);
        if c == 0 {
            2.0 * (p % width) as f64 / (width - 1) as f64 - 1.0
        } else {
            2.0 * (p / width) as f64 / (height - 1) as f64 - 1.0
        }
    })
}

fn plane_dims(depth: &Tensor<f64>, k: &CameraIntrinsics) -> Result<(usize, usize), GeometryError> {
    match depth.shape() {
        [1, h, w] if *h == k.height && *w == k.width => Ok((*h, *w)),
        s => Err(GeometryError::Shape(format!(
            "depth {s:?} vs camera {}x{}",
            k.width, k.height
        ))),
    }
}

fn points_len(pts: &Tensor<f64>) -> Result<usize, GeometryError> {
    match pts.shape() {
        [3, h, w] => Ok(h * w),
        s => Err(GeometryError::Shape(format!("points must be (3, H, W), got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_grid_small() {
        let g = pixel_grid(2, 2).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 1., 0., 0., 1., 1., 1., 1., 1., 1.]);
        assert!(pixel_grid(1, 3).is_err());
    }

    #[test]
    fn backproject_unit_camera() {
        let k = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 3,
            height: 2,
        };
        let d = Tensor::ones(&[1, 2, 3]);
        let p = backproject(&d, &k).unwrap();
        assert_eq!(p.data(), pixel_grid(3, 2).unwrap().data());
        let bad = Tensor::from_vec(&[1, 2, 3], vec![1., 1., 0., 1., 1., 1.]).unwrap();
        assert!(matches!(
            backproject(&bad, &k),
            Err(GeometryError::NonPositiveDepth(_, 2))
        ));
    }

    #[test]
    fn principal_point_maps_to_axis() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 1.0, 5, 3).unwrap();
        let d = Tensor::full(&[1, 3, 5], 7.0);
        let p = backproject(&d, &k).unwrap();
        let idx = 5 + 2;
        assert_eq!(p.data()[idx], 0.0);
        assert_eq!(p.data()[15 + idx], 0.0);
        assert_eq!(p.data()[30 + idx], 7.0);
    }

    #[test]
    fn z_clamp_keeps_projection_finite() {
        let k = CameraIntrinsics::driving(4, 3);
        let pts = Tensor::from_fn(&[3, 3, 4], |i| if i >= 24 { 0.0 } else { 0.5 });
        let g = project(&pts, &k).unwrap();
        assert!(g.is_finite());
        let u = k.fx * 0.5 / Z_MIN + k.cx;
        assert!((g.data()[0] - (2.0 * u / 3.0 - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn pose_algebra() {
        let t = Pose::from_translation([0.0, 0.0, -1.0]);
        assert_eq!(t.apply([0.0, 0.0, 5.0]), [0.0, 0.0, 4.0]);
        let r = pose_vec_to_pose(&PoseVector {
            axis_angle: [0.0, 0.0, std::f64::consts::FRAC_PI_2],
            translation: [0.0; 3],
        });
        let q = r.apply([1.0, 0.0, 0.0]);
        assert!((q[0]).abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12);
        assert_eq!(pose_vec_to_pose(&PoseVector::default()), Pose::identity());
        assert_eq!(invert_pose(&Pose::identity()), Pose::identity());
    }

    #[test]
    fn log_map_inverts_rodrigues() {
        let v = PoseVector {
            axis_angle: [0.3, -0.2, 0.5],
            translation: [1.0, 2.0, 3.0],
        };
        let back = pose_vec_to_pose(&v).to_vector();
        for i in 0..3 {
            assert!((back.axis_angle[i] - v.axis_angle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn downscaled_keeps_pixel_centres() {
        let k = CameraIntrinsics::driving(8, 4);
        let h = k.downscaled(2);
        assert_eq!((h.width, h.height), (4, 2));
        assert!((h.cx - 1.5).abs() < 1e-12);
    }
}

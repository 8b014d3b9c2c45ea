use super::scene::{Quad, SceneSpec};
use super::texture::Texture;
use crate::autodiff::Tensor;
use crate::geometry::{invert_pose, CameraIntrinsics, Pose};

/// Depth assigned to rays that leave the scene.
pub const BACKGROUND_DEPTH: f64 = 100.0;

/// Sub-pixel offsets of the colour supersampling pattern.
const SUBSAMPLES: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];

/// Rendered view: 8-bit-quantized RGB (1,3,H,W) and exact z-depth (1,1,H,W).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub image: Tensor<f32>,
    pub depth: Tensor<f32>,
}

/// Quad expressed in a camera frame, with the quantities the ray test needs.
struct CamQuad {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    normal: [f64; 3],
    u_len2: f64,
    v_len2: f64,
    texture: Texture,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn to_camera(quads: &[Quad], camera_from_world: &Pose) -> Vec<CamQuad> {
    quads
        .iter()
        .map(|q| {
            let c = q.transformed(camera_from_world);
            CamQuad {
                origin: c.origin,
                u: c.u,
                v: c.v,
                normal: cross(c.u, c.v),
                u_len2: dot(c.u, c.u),
                v_len2: dot(c.v, c.v),
                texture: c.texture,
            }
        })
        .collect()
}

/// Nearest hit along the ray `s · dir` (dir has unit z, so `s` is z-depth):
/// returns (z, quad index, surface coordinates in metres).
fn cast(quads: &[CamQuad], dir: [f64; 3]) -> Option<(f64, usize, f64, f64)> {
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for (i, q) in quads.iter().enumerate() {
        let denom = dot(dir, q.normal);
        if denom.abs() < 1e-12 {
            continue;
        }
        let s = dot(q.origin, q.normal) / denom;
        if s <= 1e-6 || best.is_some_and(|b| s >= b.0) {
            continue;
        }
        let rel = [dir[0] * s - q.origin[0], dir[1] * s - q.origin[1], dir[2] * s - q.origin[2]];
        let a = dot(rel, q.u) / q.u_len2;
        let b = dot(rel, q.v) / q.v_len2;
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            best = Some((s, i, a * q.u_len2.sqrt(), b * q.v_len2.sqrt()));
        }
    }
    best
}

fn ray(k: &CameraIntrinsics, x: f64, y: f64) -> [f64; 3] {
    [(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0]
}

fn render_view(quads: &[Quad], world_from_camera: &Pose, k: &CameraIntrinsics) -> RenderedFrame {
    let cam = to_camera(quads, &invert_pose(world_from_camera));
    let (w, h) = (k.width, k.height);
    let mut image = vec![0f32; 3 * h * w];
    let mut depth = vec![0f32; h * w];
    let bg = Texture::FLAT.color(0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let z = cast(&cam, ray(k, x as f64, y as f64)).map_or(BACKGROUND_DEPTH, |hit| hit.0);
            depth[y * w + x] = z as f32;
            let mut acc = [0.0; 3];
            for dy in SUBSAMPLES {
                for dx in SUBSAMPLES {
                    let c = match cast(&cam, ray(k, x as f64 + dx, y as f64 + dy)) {
                        Some((_, i, a, b)) => cam[i].texture.color(a, b),
                        None => bg,
                    };
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            for ch in 0..3 {
                let v = acc[ch] / 9.0;
                image[(ch * h + y) * w + x] = quantize(v);
            }
        }
    }
    RenderedFrame {
        image: Tensor::from_vec(&[1, 3, h, w], image).expect("image shape"),
        depth: Tensor::from_vec(&[1, 1, h, w], depth).expect("depth shape"),
    }
}

/// Rounds to the nearest 8-bit level, expressed in [0, 1].
pub fn quantize(v: f64) -> f32 {
    super::dataset::level_to_value((v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Renders frame `index` from the left (or only) camera.
pub fn render(spec: &SceneSpec, index: usize) -> Option<RenderedFrame> {
    let quads = spec.world_quads(index)?;
    Some(render_view(&quads, &spec.camera_pose(index)?, &spec.intrinsics))
}

/// Renders the right camera of a stereo rig.
pub fn render_right(spec: &SceneSpec, index: usize) -> Option<RenderedFrame> {
    let quads = spec.world_quads(index)?;
    Some(render_view(&quads, &spec.right_camera_pose(index)?, &spec.intrinsics))
}

/// Per-pixel visibility of target-frame surface points from the source
/// camera: in view and not hidden behind other geometry. Moving objects
/// are taken at their target-frame pose, so the mask is meaningful for
/// static scenes.
pub fn visibility_mask(spec: &SceneSpec, target: usize, source_pose: &Pose) -> Option<Vec<bool>> {
    let quads = spec.world_quads(target)?;
    let world_from_target = spec.camera_pose(target)?;
    let k = &spec.intrinsics;
    let target_cam = to_camera(&quads, &invert_pose(&world_from_target));
    let source_from_world = invert_pose(source_pose);
    let source_cam = to_camera(&quads, &source_from_world);
    let source_from_target = source_from_world.compose(&world_from_target);
    let (w, h) = (k.width, k.height);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let dir = ray(k, x as f64, y as f64);
            let Some((z, ..)) = cast(&target_cam, dir) else {
                continue;
            };
            let p = source_from_target.apply([dir[0] * z, dir[1] * z, dir[2] * z]);
            if p[2] <= 1e-3 {
                continue;
            }
            let (u, v) = (k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy);
            if !(0.0..=(w - 1) as f64).contains(&u) || !(0.0..=(h - 1) as f64).contains(&v) {
                continue;
            }
            let probe = [p[0] / p[2], p[1] / p[2], 1.0];
            let visible = cast(&source_cam, probe).is_some_and(|hit| hit.0 >= p[2] * (1.0 - 1e-4) - 1e-6);
            mask[y * w + x] = visible;
        }
    }
    Some(mask)
}

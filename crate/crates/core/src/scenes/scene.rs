use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use crate::geometry::{pose_vec_to_pose, CameraIntrinsics, Pose, PoseVector};

/// Textured parallelogram `origin + a·u + b·v`, `a, b ∈ [0, 1]`, with
/// orthogonal edge vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub origin: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub texture: Texture,
}

impl Quad {
    pub fn transformed(&self, t: &Pose) -> Quad {
        let r = Pose {
            translation: [0.0; 3],
            ..*t
        };
        Quad {
            origin: t.apply(self.origin),
            u: r.apply(self.u),
            v: r.apply(self.v),
            texture: self.texture,
        }
    }
}

/// Six faces of an axis-aligned box with corner `min` and extents `size`.
pub fn box_quads(min: [f64; 3], size: [f64; 3], texture: Texture) -> Vec<Quad> {
    let [x, y, z] = min;
    let [sx, sy, sz] = size;
    let ex = [sx, 0.0, 0.0];
    let ey = [0.0, sy, 0.0];
    let ez = [0.0, 0.0, sz];
    let face = |o: [f64; 3], u: [f64; 3], v: [f64; 3], k: u64| Quad {
        origin: o,
        u,
        v,
        texture: Texture {
            seed: texture.seed.wrapping_add(k),
            ..texture
        },
    };
    vec![
        face([x, y, z], ex, ey, 0),
        face([x, y, z + sz], ex, ey, 1),
        face([x, y, z], ez, ey, 2),
        face([x + sx, y, z], ez, ey, 3),
        face([x, y, z], ex, ez, 4),
        face([x, y + sy, z], ex, ez, 5),
    ]
}

/// Rigid object whose quads (in its own frame) move with a per-frame
/// world-from-object pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingObject {
    pub quads: Vec<Quad>,
    pub poses: Vec<[f64; 6]>,
}

/// One continuous camera run through its own static geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub primitives: Vec<Quad>,
    /// World-from-camera pose of every frame, as axis-angle + translation.
    pub trajectory: Vec<[f64; 6]>,
    #[serde(default)]
    pub moving_objects: Vec<MovingObject>,
}

/// Fully expanded scene: everything needed to render every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub stereo_baseline: Option<f64>,
    pub segments: Vec<Segment>,
}

impl SceneSpec {
    pub fn frame_count(&self) -> usize {
        self.segments.iter().map(|s| s.trajectory.len()).sum()
    }

    /// (segment, local index) of a global frame index.
    pub fn locate(&self, frame: usize) -> Option<(usize, usize)> {
        let mut start = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if frame < start + s.trajectory.len() {
                return Some((i, frame - start));
            }
            start += s.trajectory.len();
        }
        None
    }

    /// Global `[start, end)` frame ranges of the segments.
    pub fn segment_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let r = (start, start + s.trajectory.len());
                start = r.1;
                r
            })
            .collect()
    }

    pub fn camera_pose(&self, frame: usize) -> Option<Pose> {
        let (s, i) = self.locate(frame)?;
        Some(pose_vec_to_pose(&PoseVector::from_slice(&self.segments[s].trajectory[i])))
    }

    /// World-from-camera pose of the right camera of a stereo rig.
    pub fn right_camera_pose(&self, frame: usize) -> Option<Pose> {
        let b = self.stereo_baseline?;
        Some(self.camera_pose(frame)?.compose(&Pose::from_translation([b, 0.0, 0.0])))
    }

    /// Static plus moving quads of a frame, in world coordinates.
    pub fn world_quads(&self, frame: usize) -> Option<Vec<Quad>> {
        let (s, i) = self.locate(frame)?;
        let seg = &self.segments[s];
        let mut quads = seg.primitives.clone();
        for obj in &seg.moving_objects {
            let pose = pose_vec_to_pose(&PoseVector::from_slice(&obj.poses[i]));
            quads.extend(obj.quads.iter().map(|q| q.transformed(&pose)));
        }
        Some(quads)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        if self.segments.is_empty() {
            return Err("scene has no segments".into());
        }
        for (k, s) in self.segments.iter().enumerate() {
            if s.trajectory.is_empty() {
                return Err(format!("segment {k} has an empty trajectory"));
            }
            for o in &s.moving_objects {
                if o.poses.len() != s.trajectory.len() {
                    return Err(format!("segment {k}: moving object pose count differs from trajectory"));
                }
            }
        }
        if let Some(b) = self.stereo_baseline {
            if !(b > 0.0 && b.is_finite()) {
                return Err(format!("stereo baseline must be positive, got {b}"));
            }
        }
        Ok(())
    }
}

/// Procedural corridor recipe: the serialized input of dataset generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorRecipe {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Frames per independent segment; 0 means a single segment.
    #[serde(default)]
    pub segment_frames: usize,
    /// Forward motion per frame, metres.
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Relative per-segment speed variation in [0, 1).
    #[serde(default = "default_speed_jitter")]
    pub speed_jitter: f64,
    /// Peak lateral sway, metres (0 for a straight constant-velocity run).
    #[serde(default = "default_sway")]
    pub sway: f64,
    #[serde(default)]
    pub stereo_baseline: Option<f64>,
    /// Adds a box that travels with the camera.
    #[serde(default)]
    pub co_moving_object: bool,
}

fn default_speed() -> f64 {
    0.25
}
fn default_speed_jitter() -> f64 {
    0.3
}
fn default_sway() -> f64 {
    0.3
}

impl CorridorRecipe {
    pub fn new(seed: u64, width: usize, height: usize, frames: usize) -> Self {
        Self {
            seed,
            width,
            height,
            frames,
            segment_frames: 0,
            speed: default_speed(),
            speed_jitter: default_speed_jitter(),
            sway: default_sway(),
            stereo_baseline: None,
            co_moving_object: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 16 || self.height < 16 {
            return Err(format!("resolution {}x{} too small", self.width, self.height));
        }
        if self.frames == 0 {
            return Err("frames must be positive".into());
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(format!("speed must be non-negative, got {}", self.speed));
        }
        if !(0.0..1.0).contains(&self.speed_jitter) {
            return Err(format!("speed_jitter must lie in [0, 1), got {}", self.speed_jitter));
        }
        if !(self.sway >= 0.0 && self.sway < 1.5) {
            return Err(format!("sway must lie in [0, 1.5), got {}", self.sway));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SceneSpec, String> {
        self.validate()?;
        let k = CameraIntrinsics::driving(self.width, self.height);
        let per = if self.segment_frames == 0 {
            self.frames
        } else {
            self.segment_frames
        };
        let mut segments = Vec::new();
        let mut left = self.frames;
        let mut idx = 0u64;
        while left > 0 {
            let n = per.min(left);
            let mut rng = ChaCha8Rng::seed_from_u64(super::texture::splitmix64(self.seed ^ (idx << 20)));
            segments.push(self.corridor_segment(n, &mut rng));
            left -= n;
            idx += 1;
        }
        let spec = SceneSpec {
            seed: self.seed,
            intrinsics: k,
            stereo_baseline: self.stereo_baseline,
            segments,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn corridor_segment(&self, frames: usize, rng: &mut ChaCha8Rng) -> Segment {
        const HALF_WIDTH: f64 = 3.0;
        const FLOOR: f64 = 1.5;
        const CEILING: f64 = -2.2;
        let speed = self.speed * (1.0 + self.speed_jitter * rng.random_range(-1.0..1.0));
        let travel = speed * frames as f64;
        let end = travel + 45.0;
        let start = -6.0;
        let tex = |cell: f64, rng: &mut ChaCha8Rng| Texture {
            seed: rng.random(),
            tint: [rng.random(), rng.random(), rng.random()],
            cell,
        };
        let len = end - start;
        let mut prims = vec![
            // floor, ceiling, left wall, right wall, end wall
            Quad {
                origin: [-HALF_WIDTH, FLOOR, start],
                u: [2.0 * HALF_WIDTH, 0.0, 0.0],
                v: [0.0, 0.0, len],
                texture: tex(1.8, rng),
            },
            Quad {
                origin: [-HALF_WIDTH, CEILING, start],
                u: [2.0 * HALF_WIDTH, 0.0, 0.0],
                v: [0.0, 0.0, len],
                texture: tex(2.0, rng),
            },
            Quad {
                origin: [-HALF_WIDTH, CEILING, start],
                u: [0.0, FLOOR - CEILING, 0.0],
                v: [0.0, 0.0, len],
                texture: tex(1.6, rng),
            },
            Quad {
                origin: [HALF_WIDTH, CEILING, start],
                u: [0.0, FLOOR - CEILING, 0.0],
                v: [0.0, 0.0, len],
                texture: tex(1.6, rng),
            },
            Quad {
                origin: [-HALF_WIDTH, CEILING, end],
                u: [2.0 * HALF_WIDTH, 0.0, 0.0],
                v: [0.0, FLOOR - CEILING, 0.0],
                texture: tex(2.0, rng),
            },
        ];
        // Boxes standing against either wall.
        let mut z = 2.0 + rng.random_range(0.0..3.0);
        while z < end - 6.0 {
            let w = rng.random_range(0.5..1.4);
            let d = rng.random_range(0.5..1.6);
            let h = rng.random_range(0.6..2.4);
            let left = rng.random_bool(0.5);
            let inset = rng.random_range(0.0..0.6);
            let x = if left {
                -HALF_WIDTH + inset
            } else {
                HALF_WIDTH - inset - w
            };
            let t = tex(rng.random_range(0.6..1.2), rng);
            prims.extend(box_quads([x, FLOOR - h, z], [w, h, d], t));
            z += rng.random_range(2.5..6.0);
        }

        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let period = rng.random_range(60.0..140.0);
        let mut trajectory = Vec::with_capacity(frames);
        for i in 0..frames {
            let s = i as f64;
            let arg = std::f64::consts::TAU * s / period + phase;
            let x = self.sway * arg.sin();
            let dx = self.sway * std::f64::consts::TAU / period * arg.cos();
            // Heading follows the lateral motion.
            let yaw = if speed > 0.0 { (dx / speed).atan() * 0.5 } else { 0.0 };
            trajectory.push([0.0, yaw, 0.0, x, 0.0, speed * s]);
        }
        let mut moving_objects = Vec::new();
        if self.co_moving_object {
            let quads = box_quads([-0.6, -0.3, 0.0], [1.2, 1.2, 1.0], tex(0.35, rng));
            let poses = trajectory
                .iter()
                .map(|c| {
                    let cam = pose_vec_to_pose(&PoseVector::from_slice(c));
                    let obj = cam.compose(&Pose::from_translation([0.6, 0.3, 4.0]));
                    obj.to_vector().to_array()
                })
                .collect();
            moving_objects.push(MovingObject { quads, poses });
        }
        Segment {
            primitives: prims,
            trajectory,
            moving_objects,
        }
    }
}

/// Single textured plane facing the camera at depth `depth`, with the
/// camera translated along x by `tx` per frame.
pub fn fronto_parallel_scene(width: usize, height: usize, depth: f64, tx: f64, frames: usize, seed: u64) -> SceneSpec {
    let k = CameraIntrinsics::driving(width, height);
    let quad = Quad {
        origin: [-500.0, -500.0, depth],
        u: [1000.0, 0.0, 0.0],
        v: [0.0, 1000.0, 0.0],
        texture: Texture {
            seed,
            tint: [0.6, 0.4, 0.5],
            cell: 0.15 * depth,
        },
    };
    SceneSpec {
        seed,
        intrinsics: k,
        stereo_baseline: None,
        segments: vec![Segment {
            primitives: vec![quad],
            trajectory: (0..frames).map(|i| [0.0, 0.0, 0.0, tx * i as f64, 0.0, 0.0]).collect(),
            moving_objects: vec![],
        }],
    }
}

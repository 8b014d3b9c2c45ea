//! On-disk sequence layout: `frames/%06d.ppm`, `depth/%06d.f32`,
//! `intrinsics.json`, `poses.csv`, `manifest.json`, plus `frames_right/`
//! and `poses_right.csv` for stereo rigs.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render, render_right, RenderedFrame};
use super::scene::SceneSpec;
use super::texture::splitmix64;
use crate::autodiff::Tensor;
use crate::geometry::{invert_pose, pose_vec_to_pose, CameraIntrinsics, Pose, PoseVector};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
const MANIFEST_VERSION: u32 = 1;

/// Mean absolute inter-frame difference under which a frame counts as
/// stationary.
pub const STATIONARY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("invalid scene: {0}")]
    Scene(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Deterministic assignment by a hash of the frame index (80/10/10).
    pub fn of_frame(index: usize) -> Split {
        match splitmix64(index as u64) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub stereo_baseline: Option<f64>,
    /// `[start, end)` frame ranges of independent camera runs.
    pub segments: Vec<[usize; 2]>,
    pub splits: Splits,
}

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

/// Converts an 8-bit level to its float pixel value.
pub fn level_to_value(level: u8) -> f32 {
    (level as f64 / 255.0) as f32
}

fn value_to_level(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a (1,3,H,W) image in [0,1] as binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<(), DatasetError> {
    let (_, c, h, w) = image.dims4().map_err(|e| format_err(path, e.to_string()))?;
    if c != 3 {
        return Err(format_err(path, format!("expected 3 channels, got {c}")));
    }
    let d = image.data();
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            bytes.push(value_to_level(d[ch * h * w + i]));
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Reads a binary 8-bit PPM into a (1,3,H,W) tensor.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut pos = 0;
    let mut field = |what: &str| next_token(&bytes, &mut pos).ok_or_else(|| format_err(path, format!("missing {what}")));
    if field("magic")? != "P6" {
        return Err(format_err(path, "not a binary PPM"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format_err(path, format!("bad header value {s:?}")));
    let w = num(field("width")?)?;
    let h = num(field("height")?)?;
    if num(field("maxval")?)? != 255 {
        return Err(format_err(path, "only 8-bit PPM is supported"));
    }
    let data = &bytes[pos + 1..];
    if w == 0 || h == 0 || data.len() != 3 * w * h {
        return Err(format_err(path, format!("{} pixel bytes for {w}x{h}", data.len())));
    }
    let mut out = vec![0f32; 3 * w * h];
    for i in 0..w * h {
        for ch in 0..3 {
            out[ch * w * h + i] = level_to_value(data[3 * i + ch]);
        }
    }
    Tensor::from_vec(&[1, 3, h, w], out).map_err(|e| format_err(path, e.to_string()))
}

/// Writes a (1,1,H,W) depth map with the `DPTH` header.
pub fn write_depth(path: &Path, depth: &Tensor<f32>) -> Result<(), DatasetError> {
    let (_, _, h, w) = depth.dims4().map_err(|e| format_err(path, e.to_string()))?;
    let mut bytes = Vec::with_capacity(12 + 4 * w * h);
    bytes.extend_from_slice(DEPTH_MAGIC);
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    for v in depth.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_depth(path: &Path) -> Result<Tensor<f32>, DatasetError> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() < 12 || &bytes[0..4] != DEPTH_MAGIC {
        return Err(format_err(path, "missing DPTH header"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if w == 0 || h == 0 || bytes.len() != 12 + 4 * w * h {
        return Err(format_err(path, format!("{} bytes for {w}x{h} depth", bytes.len())));
    }
    let data: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(bad) = data.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(format_err(path, format!("non-positive depth {bad}")));
    }
    Tensor::from_vec(&[1, 1, h, w], data).map_err(|e| format_err(path, e.to_string()))
}

const POSE_HEADER: &str = "frame,tx,ty,tz,ax,ay,az";

fn write_poses(path: &Path, poses: &[Pose]) -> Result<(), DatasetError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(f);
    let mut body = || -> io::Result<()> {
        writeln!(out, "{POSE_HEADER}")?;
        for (i, p) in poses.iter().enumerate() {
            let v = p.to_vector();
            let t = p.translation;
            let a = v.axis_angle;
            writeln!(out, "{i},{},{},{},{},{},{}", t[0], t[1], t[2], a[0], a[1], a[2])?;
        }
        out.flush()
    };
    body().map_err(io_err(path))
}

fn read_poses(path: &Path) -> Result<Vec<Pose>, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut poses = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if n == 0 {
            if line.trim() != POSE_HEADER {
                return Err(format_err(path, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        if vals.len() != 7 || vals[0] as usize != poses.len() {
            return Err(format_err(path, format!("line {}: malformed pose row", n + 1)));
        }
        let v = PoseVector {
            axis_angle: [vals[4], vals[5], vals[6]],
            translation: [vals[1], vals[2], vals[3]],
        };
        poses.push(pose_vec_to_pose(&v));
    }
    Ok(poses)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|e| format_err(path, e.to_string()))
}

fn create_dir(path: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Renders every frame of `spec` and writes the dataset layout to `dir`.
pub fn generate_dataset(spec: &SceneSpec, dir: &Path) -> Result<DatasetManifest, DatasetError> {
    spec.validate().map_err(DatasetError::Scene)?;
    let n = spec.frame_count();
    let rendered: Vec<(RenderedFrame, Option<RenderedFrame>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let left = render(spec, i).expect("frame within trajectory");
            (left, render_right(spec, i))
        })
        .collect();

    create_dir(&dir.join("frames"))?;
    create_dir(&dir.join("depth"))?;
    let stereo = spec.stereo_baseline.is_some();
    if stereo {
        create_dir(&dir.join("frames_right"))?;
    }
    for (i, (left, right)) in rendered.iter().enumerate() {
        write_ppm(&dir.join("frames").join(frame_name(i, "ppm")), &left.image)?;
        write_depth(&dir.join("depth").join(frame_name(i, "f32")), &left.depth)?;
        if let Some(r) = right {
            write_ppm(&dir.join("frames_right").join(frame_name(i, "ppm")), &r.image)?;
        }
    }
    write_json(&dir.join("intrinsics.json"), &spec.intrinsics)?;
    let poses: Vec<Pose> = (0..n).map(|i| spec.camera_pose(i).expect("in range")).collect();
    write_poses(&dir.join("poses.csv"), &poses)?;
    if stereo {
        let right: Vec<Pose> = (0..n).map(|i| spec.right_camera_pose(i).expect("in range")).collect();
        write_poses(&dir.join("poses_right.csv"), &right)?;
    }
    let mut splits = Splits::default();
    for i in 0..n {
        match Split::of_frame(i) {
            Split::Train => splits.train.push(i),
            Split::Val => splits.val.push(i),
            Split::Test => splits.test.push(i),
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        frames: n,
        width: spec.intrinsics.width,
        height: spec.intrinsics.height,
        stereo_baseline: spec.stereo_baseline,
        segments: spec.segment_ranges().into_iter().map(|(a, b)| [a, b]).collect(),
        splits,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// One loaded frame of a sequence.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: Tensor<f32>,
    pub right: Option<Tensor<f32>>,
    pub depth: Option<Tensor<f32>>,
    /// World-from-camera pose.
    pub pose: Option<Pose>,
}

/// Target frame with its temporal neighbours, stereo partner and ground
/// truth. Relative poses map target-camera points into the other camera.
#[derive(Clone, Debug)]
pub struct FrameBundle {
    pub index: usize,
    pub target: Tensor<f32>,
    pub prev: Option<Tensor<f32>>,
    pub next: Option<Tensor<f32>>,
    pub stereo: Option<Tensor<f32>>,
    pub intrinsics: CameraIntrinsics,
    pub depth: Option<Tensor<f32>>,
    pub prev_from_target: Option<Pose>,
    pub next_from_target: Option<Pose>,
    pub stereo_from_target: Option<Pose>,
}

/// Fully loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Restrict targets to one split; neighbours are always available.
    pub split: Option<Split>,
    pub drop_stationary: bool,
}

fn mean_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum();
    s / a.len() as f64
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(format_err(&dir.join("manifest.json"), format!("unsupported version {}", manifest.version)));
        }
        let intrinsics: CameraIntrinsics = read_json(&dir.join("intrinsics.json"))?;
        intrinsics
            .validate()
            .map_err(|e| format_err(&dir.join("intrinsics.json"), e.to_string()))?;
        let poses_path = dir.join("poses.csv");
        let poses = if poses_path.exists() {
            let p = read_poses(&poses_path)?;
            if p.len() != manifest.frames {
                return Err(format_err(&poses_path, format!("{} poses for {} frames", p.len(), manifest.frames)));
            }
            Some(p)
        } else {
            None
        };
        let check = |path: &Path, t: &Tensor<f32>| -> Result<(), DatasetError> {
            let (_, _, h, w) = t.dims4().map_err(|e| format_err(path, e.to_string()))?;
            if (w, h) != (intrinsics.width, intrinsics.height) {
                return Err(format_err(
                    path,
                    format!("resolution {w}x{h} differs from {}x{}", intrinsics.width, intrinsics.height),
                ));
            }
            Ok(())
        };
        let mut frames = Vec::with_capacity(manifest.frames);
        for i in 0..manifest.frames {
            let img_path = dir.join("frames").join(frame_name(i, "ppm"));
            let image = read_ppm(&img_path)?;
            check(&img_path, &image)?;
            let depth_path = dir.join("depth").join(frame_name(i, "f32"));
            let depth = if depth_path.exists() {
                let d = read_depth(&depth_path)?;
                check(&depth_path, &d)?;
                Some(d)
            } else {
                None
            };
            let right = if manifest.stereo_baseline.is_some() {
                let p = dir.join("frames_right").join(frame_name(i, "ppm"));
                let r = read_ppm(&p)?;
                check(&p, &r)?;
                Some(r)
            } else {
                None
            };
            frames.push(Frame {
                image,
                right,
                depth,
                pose: poses.as_ref().map(|p| p[i]),
            });
        }
        Ok(Self {
            manifest,
            intrinsics,
            frames,
        })
    }

    fn segment_of(&self, i: usize) -> (usize, usize) {
        self.manifest
            .segments
            .iter()
            .find(|s| s[0] <= i && i < s[1])
            .map_or((0, self.frames.len()), |s| (s[0], s[1]))
    }

    fn relative(&self, target: usize, other: usize) -> Option<Pose> {
        let t = self.frames[target].pose?;
        let o = self.frames[other].pose?;
        Some(invert_pose(&o).compose(&t))
    }

    pub fn bundle(&self, i: usize) -> FrameBundle {
        let (start, end) = self.segment_of(i);
        let prev = (i > start).then(|| i - 1);
        let next = (i + 1 < end).then_some(i + 1);
        let f = &self.frames[i];
        FrameBundle {
            index: i,
            target: f.image.clone(),
            prev: prev.map(|p| self.frames[p].image.clone()),
            next: next.map(|n| self.frames[n].image.clone()),
            stereo: f.right.clone(),
            intrinsics: self.intrinsics,
            depth: f.depth.clone(),
            prev_from_target: prev.and_then(|p| self.relative(i, p)),
            next_from_target: next.and_then(|n| self.relative(i, n)),
            stereo_from_target: self
                .manifest
                .stereo_baseline
                .map(|b| Pose::from_translation([-b, 0.0, 0.0])),
        }
    }

    /// Whether `i` differs from its nearest neighbour by less than the
    /// stationary threshold.
    pub fn is_stationary(&self, i: usize) -> bool {
        let (start, end) = self.segment_of(i);
        let other = if i > start {
            i - 1
        } else if i + 1 < end {
            i + 1
        } else {
            return false;
        };
        mean_abs_diff(&self.frames[i].image, &self.frames[other].image) < STATIONARY_THRESHOLD
    }

    /// Bundles in frame order under `opts`.
    pub fn bundles(&self, opts: &LoadOptions) -> Vec<FrameBundle> {
        let targets: Vec<usize> = match opts.split {
            Some(s) => self.manifest.splits.get(s).to_vec(),
            None => (0..self.frames.len()).collect(),
        };
        targets
            .into_iter()
            .filter(|&i| i < self.frames.len())
            .filter(|&i| !(opts.drop_stationary && self.is_stationary(i)))
            .map(|i| self.bundle(i))
            .collect()
    }
}

/// Loads `dir` and returns its frame bundles in order.
pub fn load_sequence(dir: &Path, opts: &LoadOptions) -> Result<Vec<FrameBundle>, DatasetError> {
    Ok(Dataset::load(dir)?.bundles(opts))
}

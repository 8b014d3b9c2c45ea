//! Standard depth-error metrics with optional median scaling.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no valid pixels")]
    EmptyMask,
    #[error("length mismatch: pred {0}, gt {1}, mask {2}")]
    Length(usize, usize, usize),
    #[error("non-positive or non-finite prediction {0}")]
    BadPrediction(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3
        )
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    /// Arithmetic mean of per-frame metrics.
    pub fn mean(frames: &[DepthMetrics]) -> Option<DepthMetrics> {
        if frames.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for f in frames {
            for (a, v) in acc.iter_mut().zip(f.as_array()) {
                *a += v;
            }
        }
        let n = frames.len() as f64;
        let a = acc.map(|v| v / n);
        Some(DepthMetrics {
            abs_rel: a[0],
            sq_rel: a[1],
            rmse: a[2],
            rmse_log: a[3],
            delta1: a[4],
            delta2: a[5],
            delta3: a[6],
        })
    }
}

/// Evaluation clamp: ground truth outside `(min_depth, max_depth)` is
/// invalid, predictions are clamped into the range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRange {
    pub min_depth: f64,
    pub max_depth: f64,
    /// Evaluate only inside this crop; off by default.
    #[serde(default)]
    pub crop: Option<Crop>,
}

impl Default for EvalRange {
    fn default() -> Self {
        Self {
            min_depth: 1e-3,
            max_depth: 80.0,
            crop: None,
        }
    }
}

/// Image-relative crop: rows in `[top, bottom)`, columns in `[left, right)`,
/// as fractions of the frame size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crop {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl Crop {
    /// The customary crop of the Eigen split.
    pub const GARG: Crop = Crop {
        top: 0.408_108_11,
        bottom: 0.991_891_89,
        left: 0.035_947_71,
        right: 0.964_052_29,
    };

    /// Row-major mask of an `height` × `width` frame.
    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        let (r0, r1) = ((self.top * height as f64) as usize, (self.bottom * height as f64) as usize);
        let (c0, c1) = ((self.left * width as f64) as usize, (self.right * width as f64) as usize);
        (0..height)
            .flat_map(|r| (0..width).map(move |c| (r0..r1).contains(&r) && (c0..c1).contains(&c)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Per-image median ratio.
    Median,
    /// Known absolute scale (stereo baseline); predictions used as is.
    Baseline,
    None,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Multiplies `pred` by `median(gt) / median(pred)` over valid pixels.
pub fn median_scale(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(Vec<f64>, f64), MetricsError> {
    check_lengths(pred, gt, valid)?;
    let mut p: Vec<f64> = Vec::new();
    let mut g: Vec<f64> = Vec::new();
    for i in 0..pred.len() {
        if valid[i] {
            p.push(pred[i]);
            g.push(gt[i]);
        }
    }
    if p.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let mp = median(&mut p);
    if !(mp > 0.0 && mp.is_finite()) {
        return Err(MetricsError::BadPrediction(mp));
    }
    let scale = median(&mut g) / mp;
    Ok((pred.iter().map(|v| v * scale).collect(), scale))
}

fn check_lengths(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() || gt.len() != valid.len() {
        return Err(MetricsError::Length(pred.len(), gt.len(), valid.len()));
    }
    Ok(())
}

/// Valid-pixel mask of a ground-truth map under `range`.
pub fn valid_mask(gt: &[f64], range: &EvalRange) -> Vec<bool> {
    gt.iter()
        .map(|&g| g > range.min_depth && g < range.max_depth)
        .collect()
}

pub fn compute_metrics(
    pred: &[f64],
    gt: &[f64],
    valid: &[bool],
    range: &EvalRange,
) -> Result<DepthMetrics, MetricsError> {
    check_lengths(pred, gt, valid)?;
    let mut n = 0usize;
    let mut acc = [0.0f64; 7];
    for i in 0..pred.len() {
        let g = gt[i];
        if !valid[i] || !(g > range.min_depth && g < range.max_depth) {
            continue;
        }
        if !pred[i].is_finite() {
            return Err(MetricsError::BadPrediction(pred[i]));
        }
        let p = pred[i].clamp(range.min_depth, range.max_depth);
        let d = p - g;
        let ratio = (p / g).max(g / p);
        acc[0] += d.abs() / g;
        acc[1] += d * d / g;
        acc[2] += d * d;
        acc[3] += (p.ln() - g.ln()).powi(2);
        acc[4] += (ratio < 1.25) as u8 as f64;
        acc[5] += (ratio < 1.25f64.powi(2)) as u8 as f64;
        acc[6] += (ratio < 1.25f64.powi(3)) as u8 as f64;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let n = n as f64;
    Ok(DepthMetrics {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
    })
}

/// Metrics of one frame after the requested scaling. The crop of `range`
/// needs the frame layout and is applied by [`evaluate_map`] only.
pub fn evaluate_frame(
    pred: &[f64],
    gt: &[f64],
    scaling: Scaling,
    range: &EvalRange,
) -> Result<DepthMetrics, MetricsError> {
    evaluate_masked(pred, gt, valid_mask(gt, range), scaling, range)
}

/// [`evaluate_frame`] on a row-major `height` × `width` map, honouring the
/// crop of `range`.
pub fn evaluate_map(
    pred: &[f64],
    gt: &[f64],
    height: usize,
    width: usize,
    scaling: Scaling,
    range: &EvalRange,
) -> Result<DepthMetrics, MetricsError> {
    let mut valid = valid_mask(gt, range);
    if let Some(crop) = &range.crop {
        let inside = crop.mask(height, width);
        if inside.len() != valid.len() {
            return Err(MetricsError::Length(pred.len(), gt.len(), inside.len()));
        }
        for (v, i) in valid.iter_mut().zip(inside) {
            *v &= i;
        }
    }
    evaluate_masked(pred, gt, valid, scaling, range)
}

fn evaluate_masked(
    pred: &[f64],
    gt: &[f64],
    valid: Vec<bool>,
    scaling: Scaling,
    range: &EvalRange,
) -> Result<DepthMetrics, MetricsError> {
    match scaling {
        Scaling::Median => {
            let (scaled, _) = median_scale(pred, gt, &valid)?;
            compute_metrics(&scaled, gt, &valid, range)
        }
        Scaling::Baseline | Scaling::None => compute_metrics(pred, gt, &valid, range),
    }
}

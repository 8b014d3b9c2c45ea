//! Central finite-difference oracle for analytic gradients.

use rand::seq::index;
use rand::Rng;

use super::graph::KinkSignature;
use super::tensor::Tensor;
use super::EngineError;

/// One evaluation of the function under test.
pub struct Probe {
    pub value: f64,
    /// Analytic gradient; only required at the base point.
    pub grad: Option<Tensor<f64>>,
    /// Discrete branch signature of the evaluation, when tracked.
    pub signature: Option<KinkSignature>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Coordinate at which the maximum error occurred.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±eps probes crossed a kink and were not compared.
    pub skipped: usize,
}

impl FdReport {
    pub fn merge(&mut self, other: &FdReport) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradient of `f` at `point` against central
/// differences with step `eps`.
///
/// `f(x, want_grad)` evaluates the function; the gradient is requested
/// only at the base point. When probes report a [`KinkSignature`], any
/// coordinate whose perturbed evaluations land on a different smooth piece
/// than the base point is skipped. `coords` restricts the check to a subset
/// of coordinates (all when `None`).
pub fn finite_difference_check<F>(
    mut f: F,
    point: &Tensor<f64>,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<FdReport, EngineError>
where
    F: FnMut(&Tensor<f64>, bool) -> Result<Probe, EngineError>,
{
    let base = f(point, true)?;
    if !base.value.is_finite() {
        return Err(EngineError::NonFinite("gradcheck base point"));
    }
    let grad = base
        .grad
        .ok_or_else(|| EngineError::MissingGradient("gradcheck base point".into()))?;
    if grad.shape() != point.shape() {
        return Err(EngineError::Shape("gradient shape differs from point".into()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut report = FdReport::default();
    let mut x = point.clone();
    for &i in coords {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = f(&x, false)?;
        x.data_mut()[i] = orig - eps;
        let minus = f(&x, false)?;
        x.data_mut()[i] = orig;
        if !plus.value.is_finite() || !minus.value.is_finite() {
            return Err(EngineError::NonFinite("gradcheck probe"));
        }
        if base.signature.is_some()
            && (plus.signature != base.signature || minus.signature != base.signature)
        {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let err = relative_error(grad.data()[i], numeric);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(i);
        }
    }
    Ok(report)
}

/// Draws up to `count` distinct coordinates whose gradient magnitude is at
/// least `floor` times the largest one. Tiny components carry no signal at
/// finite-difference precision.
pub fn significant_coordinates<R: Rng>(
    grad: &Tensor<f64>,
    count: usize,
    floor: f64,
    rng: &mut R,
) -> Vec<usize> {
    let max = grad.max_abs();
    let pool: Vec<usize> = (0..grad.len())
        .filter(|&i| grad.data()[i].abs() >= floor * max && max > 0.0)
        .collect();
    if pool.len() <= count {
        return pool;
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    picked.sort_unstable();
    picked
}

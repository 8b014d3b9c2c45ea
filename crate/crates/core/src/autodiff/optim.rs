//! First-order optimizers over [`ParameterGroup`]s.
//!
//! Both optimizers update exactly the tensors picked by a selection
//! predicate on a trainable group. Normalization running statistics are
//! never touched here; they are state written by the forward pass.

use indexmap::IndexMap;

use super::params::{NamedTensors, ParameterGroup};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::EngineError;

fn selected<'a, T: Scalar>(
    group: &'a ParameterGroup<T>,
    select: &'a dyn Fn(&str) -> bool,
) -> impl Iterator<Item = String> + 'a {
    let on = group.trainable;
    group
        .tensors
        .keys()
        .filter(move |k| on && select(k))
        .cloned()
}

fn check_grads<T: Scalar>(
    group: &ParameterGroup<T>,
    grads: &NamedTensors<T>,
) -> Result<(), EngineError> {
    for (k, g) in grads {
        let w = group
            .tensors
            .get(k)
            .ok_or_else(|| EngineError::UnknownTensor(format!("{}.{k}", group.name)))?;
        if w.shape() != g.shape() {
            return Err(EngineError::Shape(format!(
                "gradient for {k} has shape {:?}, tensor {:?}",
                g.shape(),
                w.shape()
            )));
        }
    }
    Ok(())
}

/// Vanilla gradient descent `w ← w − lr·g` on the selected tensors.
pub fn sgd_step<T: Scalar>(
    group: &mut ParameterGroup<T>,
    grads: &NamedTensors<T>,
    lr: f64,
    select: &dyn Fn(&str) -> bool,
) -> Result<(), EngineError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(EngineError::InvalidLearningRate(lr));
    }
    check_grads(group, grads)?;
    let names: Vec<String> = selected(group, select).collect();
    for name in &names {
        if !grads.contains_key(name) {
            return Err(EngineError::MissingGradient(format!("{}.{name}", group.name)));
        }
    }
    let lr = T::c(lr);
    for name in names {
        let g = &grads[&name];
        let w = group.tensors.get_mut(&name).expect("selected tensor");
        for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u32,
    pub m: NamedTensors<T>,
    pub v: NamedTensors<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }
}

/// One bias-corrected Adam update of the selected tensors.
pub fn adam_step<T: Scalar>(
    group: &mut ParameterGroup<T>,
    grads: &NamedTensors<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    select: &dyn Fn(&str) -> bool,
) -> Result<(), EngineError> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(EngineError::InvalidLearningRate(cfg.lr));
    }
    check_grads(group, grads)?;
    let names: Vec<String> = selected(group, select).collect();
    for name in &names {
        if !grads.contains_key(name) {
            return Err(EngineError::MissingGradient(format!("{}.{name}", group.name)));
        }
    }
    let step = state.step.checked_add(1).ok_or(EngineError::StepOverflow)?;
    state.step = step;
    let bc1 = 1.0 - cfg.beta1.powi(step.min(i32::MAX as u32) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step.min(i32::MAX as u32) as i32);
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let (lr, eps) = (T::c(cfg.lr), T::c(cfg.eps));
    let (bc1, bc2) = (T::c(bc1), T::c(bc2));
    for name in names {
        let g = &grads[&name];
        let w = group.tensors.get_mut(&name).expect("selected tensor");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name)
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let (wd, md, vd) = (w.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..wd.len() {
            let gv = g.data()[i];
            md[i] = b1 * md[i] + (T::one() - b1) * gv;
            vd[i] = b2 * vd[i] + (T::one() - b2) * gv * gv;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            wd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

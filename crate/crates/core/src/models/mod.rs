//! Depth and pose networks, their four-way parameter partition and
//! checkpoint persistence.

mod checkpoint;
mod net;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EngineError, Graph, GroupName, NormMode, ParameterGroup, Scalar, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, tensor_checksum, Checkpoint, CheckpointError, TrainingMeta, CHECKPOINT_VERSION,
};
pub use net::{depth_forward, pose_forward, Binding, NormRecord};

/// Metric range spanned by the disparity parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self {
            d_min: 0.1,
            d_max: 100.0,
        }
    }
}

impl DepthRange {
    /// `(a, b)` of `D = 1 / (a·σ + b)`.
    pub fn coefficients(&self) -> (f64, f64) {
        (1.0 / self.d_min - 1.0 / self.d_max, 1.0 / self.d_max)
    }

    pub fn depth(&self, sigma: f64) -> f64 {
        let (a, b) = self.coefficients();
        1.0 / (a * sigma + b)
    }

    /// Inverse of [`DepthRange::depth`].
    pub fn sigma(&self, depth: f64) -> f64 {
        let (a, b) = self.coefficients();
        (1.0 / depth - b) / a
    }
}

/// Differentiable disparity-to-depth conversion.
pub fn disp_to_depth<T: Scalar>(g: &mut Graph<T>, sigma: Var, range: &DepthRange) -> Result<Var, EngineError> {
    let (a, b) = range.coefficients();
    let inv = g.scale(sigma, a)?;
    let inv = g.add_scalar(inv, b)?;
    let one = g.constant(Tensor::ones(&[1, 1, 1, 1]))?;
    g.div(one, inv)
}

/// Elementwise conversion of plain values; rejects σ outside [0, 1].
/// The end points are reachable by a saturated sigmoid.
pub fn disp_to_depth_values<T: Scalar>(sigma: &Tensor<T>, range: &DepthRange) -> Result<Tensor<T>, EngineError> {
    if let Some(bad) = sigma.data().iter().find(|&&s| !(s >= T::zero() && s <= T::one())) {
        return Err(EngineError::Shape(format!("disparity {bad} outside [0, 1]")));
    }
    Ok(sigma.map(|s| T::c(range.depth(s.f64()))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub encoder_widths: [usize; 4],
    pub decoder_widths: [usize; 4],
    pub pose_hidden: usize,
    pub scales: usize,
    pub pose_scale: f64,
    pub norm_momentum: f64,
    pub norm_eps: f64,
    pub range: DepthRange,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 192,
            height: 64,
            encoder_widths: [16, 32, 64, 128],
            decoder_widths: [16, 32, 64, 128],
            pose_hidden: 64,
            scales: 2,
            pose_scale: 0.01,
            norm_momentum: 0.1,
            norm_eps: 1e-5,
            range: DepthRange::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.width % 16 != 0 || self.height % 16 != 0 || self.width == 0 || self.height == 0 {
            return Err(format!(
                "resolution {}x{} must be a positive multiple of 16",
                self.width, self.height
            ));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) || self.pose_hidden == 0 {
            return Err("layer widths must be positive".into());
        }
        if !(1..=2).contains(&self.scales) {
            return Err(format!("scales must be 1 or 2, got {}", self.scales));
        }
        if !(self.range.d_min > 0.0 && self.range.d_min < self.range.d_max) {
            return Err(format!("invalid depth range {:?}", self.range));
        }
        Ok(())
    }
}

/// Depth network plus pose network, stored as four parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    groups: Vec<ParameterGroup<T>>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized model (He-normal convolutions, unit norm scales).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, String> {
        config.validate()?;
        let groups = net::init_groups(&config, seed);
        Ok(Self { config, groups })
    }

    pub(crate) fn from_groups(config: ModelConfig, groups: Vec<ParameterGroup<T>>) -> Result<Self, String> {
        let names: Vec<GroupName> = groups.iter().map(|g| g.name).collect();
        if names != GroupName::ALL {
            return Err(format!("groups must be exactly {:?}, got {names:?}", GroupName::ALL));
        }
        let reference = net::init_groups::<T>(&config, 0);
        for (got, want) in groups.iter().zip(&reference) {
            let shapes = |g: &ParameterGroup<T>| -> Vec<(String, Vec<usize>)> {
                g.tensors
                    .iter()
                    .chain(&g.norm_stats)
                    .map(|(k, v)| (k.clone(), v.shape().to_vec()))
                    .collect()
            };
            if shapes(got) != shapes(want) {
                return Err(format!("group {} does not match the architecture", got.name));
            }
        }
        Ok(Self { config, groups })
    }

    pub fn group(&self, name: GroupName) -> &ParameterGroup<T> {
        &self.groups[name as usize]
    }

    pub fn group_mut(&mut self, name: GroupName) -> &mut ParameterGroup<T> {
        &mut self.groups[name as usize]
    }

    pub fn groups(&self) -> &[ParameterGroup<T>] {
        &self.groups
    }

    /// The four groups keyed by name.
    pub fn partition(&self) -> IndexMap<GroupName, &ParameterGroup<T>> {
        self.groups.iter().map(|g| (g.name, g)).collect()
    }

    /// Groups holding a trainable tensor of this name.
    pub fn groups_containing(&self, tensor: &str) -> Vec<GroupName> {
        self.groups
            .iter()
            .filter(|g| g.tensors.contains_key(tensor))
            .map(|g| g.name)
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.groups.iter().map(ParameterGroup::num_scalars).sum()
    }

    pub fn num_tensors(&self) -> usize {
        self.groups.iter().map(|g| g.tensors.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            groups: self.groups.iter().map(ParameterGroup::cast).collect(),
        }
    }

    /// Folds the batch statistics recorded during a training-mode forward
    /// pass into the running statistics of their groups. Groups whose
    /// statistics are frozen are left alone.
    pub fn update_norm_stats(&mut self, g: &Graph<T>, records: &[NormRecord]) -> Result<(), EngineError> {
        let m = T::c(self.config.norm_momentum);
        for r in records {
            if r.mode != NormMode::Train {
                continue;
            }
            let group = &mut self.groups[r.group as usize];
            if group.norm_stats_frozen {
                continue;
            }
            let stats = g
                .batch_stats(r.node)
                .ok_or_else(|| EngineError::MissingGradient(format!("batch stats of {}", r.prefix)))?;
            for (suffix, src) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                let key = format!("{}.{suffix}", r.prefix);
                let t = group
                    .norm_stats
                    .get_mut(&key)
                    .ok_or_else(|| EngineError::UnknownTensor(key.clone()))?;
                for (v, &b) in t.data_mut().iter_mut().zip(src) {
                    *v = (T::one() - m) * *v + m * b;
                }
            }
        }
        Ok(())
    }
}

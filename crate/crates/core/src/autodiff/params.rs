use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Insertion-ordered map of named tensors.
pub type NamedTensors<T> = IndexMap<String, Tensor<T>>;

/// The four sub-networks whose parameters partition the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    DepthEncoder,
    DepthDecoder,
    PoseEncoder,
    PoseDecoder,
}

impl GroupName {
    pub const ALL: [GroupName; 4] = [
        GroupName::DepthEncoder,
        GroupName::DepthDecoder,
        GroupName::PoseEncoder,
        GroupName::PoseDecoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupName::DepthEncoder => "depth_encoder",
            GroupName::DepthDecoder => "depth_decoder",
            GroupName::PoseEncoder => "pose_encoder",
            GroupName::PoseDecoder => "pose_decoder",
        }
    }

    pub fn is_encoder(self) -> bool {
        matches!(self, GroupName::DepthEncoder | GroupName::PoseEncoder)
    }

    pub fn is_pose(self) -> bool {
        matches!(self, GroupName::PoseEncoder | GroupName::PoseDecoder)
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupName::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown parameter group '{s}'"))
    }
}

/// Trainable weights of one sub-network plus its normalization running
/// statistics, which are state rather than parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGroup<T> {
    pub name: GroupName,
    pub tensors: NamedTensors<T>,
    pub norm_stats: NamedTensors<T>,
    pub trainable: bool,
    pub norm_stats_frozen: bool,
}

impl<T: Scalar> ParameterGroup<T> {
    pub fn new(name: GroupName) -> Self {
        Self {
            name,
            tensors: IndexMap::new(),
            norm_stats: IndexMap::new(),
            trainable: true,
            norm_stats_frozen: false,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterGroup<U> {
        ParameterGroup {
            name: self.name,
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            norm_stats: self
                .norm_stats
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            trainable: self.trainable,
            norm_stats_frozen: self.norm_stats_frozen,
        }
    }
}

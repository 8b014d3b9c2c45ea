use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::GroupName;

/// One selectable part of the model: a whole group, or the stem / final
/// residual block of an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Component {
    Group(GroupName),
    FirstLayer(GroupName),
    LastBlock(GroupName),
}

impl Component {
    pub fn group(self) -> GroupName {
        match self {
            Component::Group(g) | Component::FirstLayer(g) | Component::LastBlock(g) => g,
        }
    }

    fn covers(self, group: GroupName, tensor: &str) -> bool {
        match self {
            Component::Group(g) => g == group,
            Component::FirstLayer(g) => g == group && (tensor.starts_with("conv1.") || tensor.starts_with("bn1.")),
            Component::LastBlock(g) => g == group && tensor.starts_with("layer4.1."),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Group(g) => write!(f, "{g}"),
            Component::FirstLayer(g) => write!(f, "{g}.first_layer"),
            Component::LastBlock(g) => write!(f, "{g}.last_block"),
        }
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (head, tail) = match s.split_once('.') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        let group: GroupName = head.parse()?;
        match tail {
            None => Ok(Component::Group(group)),
            Some(part) if !group.is_encoder() => Err(format!("{group} has no sub-component '{part}'")),
            Some("first_layer") => Ok(Component::FirstLayer(group)),
            Some("last_block") => Ok(Component::LastBlock(group)),
            Some(part) => Err(format!("unknown sub-component '{part}' of {group}")),
        }
    }
}

impl TryFrom<String> for Component {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Component> for String {
    fn from(c: Component) -> String {
        c.to_string()
    }
}

/// Which tensors adaptation may modify.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct ComponentMask {
    components: Vec<Component>,
    /// Keeps normalization layers fixed: running statistics are not
    /// updated and their affine parameters are not adapted.
    pub freeze_norm_stats: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRepr {
    components: Vec<Component>,
    #[serde(default = "yes")]
    freeze_norm_stats: bool,
}

fn yes() -> bool {
    true
}

impl TryFrom<MaskRepr> for ComponentMask {
    type Error = String;
    fn try_from(r: MaskRepr) -> Result<Self, String> {
        let mut m = ComponentMask::new(r.components)?;
        m.freeze_norm_stats = r.freeze_norm_stats;
        Ok(m)
    }
}

impl From<ComponentMask> for MaskRepr {
    fn from(m: ComponentMask) -> Self {
        MaskRepr {
            components: m.components,
            freeze_norm_stats: m.freeze_norm_stats,
        }
    }
}

/// Normalization-layer affine parameters.
pub fn is_norm_tensor(name: &str) -> bool {
    name.starts_with("bn1.") || name.contains(".bn1.") || name.contains(".bn2.") || name.contains(".downsample.1.")
}

impl ComponentMask {
    /// Mask over `components`; a sub-component may not be listed together
    /// with its parent group.
    pub fn new(components: impl IntoIterator<Item = Component>) -> Result<Self, String> {
        let mut list: Vec<Component> = components.into_iter().collect();
        list.sort();
        list.dedup();
        for c in &list {
            if !matches!(c, Component::Group(_)) && list.contains(&Component::Group(c.group())) {
                return Err(format!("{c} overlaps its parent group {}", c.group()));
            }
        }
        Ok(Self {
            components: list,
            freeze_norm_stats: true,
        })
    }

    pub fn empty() -> Self {
        Self {
            components: Vec::new(),
            freeze_norm_stats: true,
        }
    }

    pub fn groups(groups: &[GroupName]) -> Self {
        Self::new(groups.iter().map(|&g| Component::Group(g))).expect("whole groups never overlap")
    }

    /// Depth and pose encoders.
    pub fn encoders() -> Self {
        Self::groups(&[GroupName::DepthEncoder, GroupName::PoseEncoder])
    }

    pub fn whole_network() -> Self {
        Self::groups(&GroupName::ALL)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Whether `group.tensor` is adapted under this mask.
    pub fn selects(&self, group: GroupName, tensor: &str) -> bool {
        if self.freeze_norm_stats && is_norm_tensor(tensor) {
            return false;
        }
        self.components.iter().any(|c| c.covers(group, tensor))
    }

    pub fn touches(&self, group: GroupName) -> bool {
        self.components.iter().any(|c| c.group() == group)
    }

    pub fn touches_pose(&self) -> bool {
        self.components.iter().any(|c| c.group().is_pose())
    }

    /// Mask restricted to depth groups.
    pub fn without_pose(&self) -> Self {
        Self {
            components: self.components.iter().copied().filter(|c| !c.group().is_pose()).collect(),
            freeze_norm_stats: self.freeze_norm_stats,
        }
    }

    /// `+`-joined component list, as used in CSV rows.
    pub fn label(&self) -> String {
        if self.components.is_empty() {
            return "none".into();
        }
        self.components.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("+")
    }

    /// Parses a comma- or `+`-separated list.
    pub fn parse_list(s: &str) -> Result<Self, String> {
        let parts: Vec<Component> = s
            .split([',', '+'])
            .map(str::trim)
            .filter(|p| !p.is_empty() && *p != "none")
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        Self::new(parts)
    }
}

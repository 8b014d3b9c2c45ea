//! Architectures. Parameter names follow the usual `layerK.B.convN.weight`
//! scheme so sub-components can be addressed by prefix.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Model, ModelConfig};
use crate::autodiff::{EngineError, Graph, GroupName, NamedTensors, NormMode, ParameterGroup, Scalar, Tensor, Var};

// ---------------------------------------------------------------------------
// Initialization

struct Init<T> {
    group: ParameterGroup<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<T> {
    fn new(name: GroupName, seed: u64) -> Self {
        Self {
            group: ParameterGroup::new(name),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(name as u64 + 1))),
        }
    }

    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize, bias: bool) {
        let fan_in = (ci * k * k) as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[co, ci, k, k], |_| T::c(dist.sample(rng)));
        self.group.tensors.insert(format!("{name}.weight"), w);
        if bias {
            self.group.tensors.insert(format!("{name}.bias"), Tensor::zeros(&[co]));
        }
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.group.tensors.insert(format!("{name}.weight"), Tensor::ones(&[c]));
        self.group.tensors.insert(format!("{name}.bias"), Tensor::zeros(&[c]));
        self.group.norm_stats.insert(format!("{name}.running_mean"), Tensor::zeros(&[c]));
        self.group.norm_stats.insert(format!("{name}.running_var"), Tensor::ones(&[c]));
    }

    fn encoder(&mut self, in_ch: usize, widths: &[usize; 4]) {
        self.conv("conv1", widths[0], in_ch, 3, false);
        self.norm("bn1", widths[0]);
        let mut prev = widths[0];
        for (stage, &w) in widths.iter().enumerate() {
            for block in 0..2 {
                let p = format!("layer{}.{block}", stage + 1);
                let cin = if block == 0 { prev } else { w };
                self.conv(&format!("{p}.conv1"), w, cin, 3, false);
                self.norm(&format!("{p}.bn1"), w);
                self.conv(&format!("{p}.conv2"), w, w, 3, false);
                self.norm(&format!("{p}.bn2"), w);
                if block == 0 && stage > 0 {
                    self.conv(&format!("{p}.downsample.0"), w, cin, 1, false);
                    self.norm(&format!("{p}.downsample.1"), w);
                }
            }
            prev = w;
        }
    }

    fn depth_decoder(&mut self, cfg: &ModelConfig) {
        let enc = &cfg.encoder_widths;
        let dec = &cfg.decoder_widths;
        for i in (0..4).rev() {
            let cin = if i == 3 { enc[3] } else { dec[i + 1] };
            self.conv(&format!("upconv.{i}.0"), dec[i], cin, 3, true);
            let skip = skip_channels(cfg, i);
            self.conv(&format!("upconv.{i}.1"), dec[i], dec[i] + skip, 3, true);
            if i < cfg.scales {
                self.conv(&format!("dispconv.{i}"), 1, dec[i], 3, true);
            }
        }
    }

    fn pose_decoder(&mut self, cfg: &ModelConfig) {
        let h = cfg.pose_hidden;
        self.conv("squeeze", h, cfg.encoder_widths[3], 1, true);
        self.conv("pose.0", h, h, 3, true);
        self.conv("pose.1", h, h, 3, true);
        self.conv("pose.2", 6, h, 1, true);
        // A small output layer keeps the initial motion estimate near zero.
        let w = self.group.tensors.get_mut("pose.2.weight").expect("just inserted");
        w.data_mut().iter_mut().for_each(|v| *v *= T::c(0.1));
    }
}

/// Encoder channels concatenated into decoder level `i`.
fn skip_channels(cfg: &ModelConfig, i: usize) -> usize {
    match i {
        // Upsampled from H/16 to H/8, H/4, H/2: join layer3, layer2, layer1.
        3 => cfg.encoder_widths[2],
        2 => cfg.encoder_widths[1],
        1 => cfg.encoder_widths[0],
        _ => 0,
    }
}

pub(crate) fn init_groups<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Vec<ParameterGroup<T>> {
    let mut de = Init::new(GroupName::DepthEncoder, seed);
    de.encoder(3, &cfg.encoder_widths);
    let mut dd = Init::new(GroupName::DepthDecoder, seed);
    dd.depth_decoder(cfg);
    let mut pe = Init::new(GroupName::PoseEncoder, seed);
    pe.encoder(6, &cfg.encoder_widths);
    let mut pd = Init::new(GroupName::PoseDecoder, seed);
    pd.pose_decoder(cfg);
    vec![de.group, dd.group, pe.group, pd.group]
}

// ---------------------------------------------------------------------------
// Forward passes

/// Leaves holding the model's tensors on one graph.
pub struct Binding {
    vars: Vec<IndexMap<String, Var>>,
}

impl Binding {
    /// Places every tensor of `groups` on the graph. Tensors accepted by
    /// `trainable` are created as gradient-requiring leaves.
    pub fn new<T: Scalar>(
        g: &mut Graph<T>,
        model: &Model<T>,
        groups: &[GroupName],
        trainable: &dyn Fn(GroupName, &str) -> bool,
    ) -> Result<Self, EngineError> {
        let mut vars = vec![IndexMap::new(); 4];
        for &name in groups {
            let group = model.group(name);
            for (k, t) in &group.tensors {
                let v = g.leaf(t.clone(), trainable(name, k))?;
                vars[name as usize].insert(k.clone(), v);
            }
        }
        Ok(Self { vars })
    }

    pub fn get(&self, group: GroupName, name: &str) -> Result<Var, EngineError> {
        self.vars[group as usize]
            .get(name)
            .copied()
            .ok_or_else(|| EngineError::UnknownTensor(format!("{group}.{name}")))
    }

    /// Bound tensors of one group, in model order.
    pub fn group(&self, group: GroupName) -> &IndexMap<String, Var> {
        &self.vars[group as usize]
    }
}

/// A normalization node evaluated during a forward pass.
#[derive(Clone, Debug)]
pub struct NormRecord {
    pub group: GroupName,
    pub prefix: String,
    pub node: Var,
    pub mode: NormMode,
}

struct Net<'a, T: Scalar> {
    g: &'a mut Graph<T>,
    params: &'a Binding,
    stats: &'a NamedTensors<T>,
    group: GroupName,
    mode: NormMode,
    eps: f64,
    records: &'a mut Vec<NormRecord>,
}

impl<T: Scalar> Net<'_, T> {
    fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var, EngineError> {
        let w = self.params.get(self.group, &format!("{name}.weight"))?;
        let b = self.params.get(self.group, &format!("{name}.bias")).ok();
        self.g.conv2d(x, w, b, stride, pad)
    }

    /// 3×3 convolution over a reflection-padded input.
    fn conv_reflect(&mut self, name: &str, x: Var) -> Result<Var, EngineError> {
        let xp = self.g.reflect_pad(x, 1)?;
        self.conv(name, xp, 1, 0)
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var, EngineError> {
        let gamma = self.params.get(self.group, &format!("{name}.weight"))?;
        let beta = self.params.get(self.group, &format!("{name}.bias"))?;
        let stat = |s: &str| {
            self.stats
                .get(&format!("{name}.{s}"))
                .map(|t| t.data().to_vec())
                .ok_or_else(|| EngineError::UnknownTensor(format!("{}.{name}.{s}", self.group)))
        };
        let (rm, rv) = (stat("running_mean")?, stat("running_var")?);
        let y = self.g.batch_norm(x, gamma, beta, &rm, &rv, self.mode, self.eps)?;
        self.records.push(NormRecord {
            group: self.group,
            prefix: name.to_string(),
            node: y,
            mode: self.mode,
        });
        Ok(y)
    }

    fn block(&mut self, prefix: &str, x: Var, stride: usize, downsample: bool) -> Result<Var, EngineError> {
        let h = self.conv(&format!("{prefix}.conv1"), x, stride, 1)?;
        let h = self.norm(&format!("{prefix}.bn1"), h)?;
        let h = self.g.relu(h)?;
        let h = self.conv(&format!("{prefix}.conv2"), h, 1, 1)?;
        let h = self.norm(&format!("{prefix}.bn2"), h)?;
        let shortcut = if downsample {
            let s = self.conv(&format!("{prefix}.downsample.0"), x, stride, 0)?;
            self.norm(&format!("{prefix}.downsample.1"), s)?
        } else {
            x
        };
        let sum = self.g.add(h, shortcut)?;
        self.g.relu(sum)
    }

    /// Feature maps at H/2 (stem), H/2, H/4, H/8, H/16.
    fn encoder(&mut self, x: Var) -> Result<[Var; 5], EngineError> {
        let f0 = self.conv("conv1", x, 2, 1)?;
        let f0 = self.norm("bn1", f0)?;
        let f0 = self.g.relu(f0)?;
        let mut feats = [f0; 5];
        let mut h = f0;
        for stage in 0..4 {
            let stride = if stage == 0 { 1 } else { 2 };
            h = self.block(&format!("layer{}.0", stage + 1), h, stride, stage > 0)?;
            h = self.block(&format!("layer{}.1", stage + 1), h, 1, false)?;
            feats[stage + 1] = h;
        }
        Ok(feats)
    }
}

/// Disparity maps in (0, 1), finest scale first: scale `s` has resolution
/// halved `s` times.
pub fn depth_forward<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    params: &Binding,
    image: Var,
    mode: NormMode,
    records: &mut Vec<NormRecord>,
) -> Result<Vec<Var>, EngineError> {
    let cfg = &model.config;
    check_input(g, image, 3, cfg)?;
    let feats = {
        let mut enc = Net {
            g: &mut *g,
            params,
            stats: &model.group(GroupName::DepthEncoder).norm_stats,
            group: GroupName::DepthEncoder,
            mode,
            eps: cfg.norm_eps,
            records: &mut *records,
        };
        enc.encoder(image)?
    };
    let empty = NamedTensors::new();
    let mut dec = Net {
        g,
        params,
        stats: &empty,
        group: GroupName::DepthDecoder,
        mode,
        eps: cfg.norm_eps,
        records,
    };
    let mut x = feats[4];
    let mut disps = vec![None; cfg.scales];
    for i in (0..4).rev() {
        x = dec.conv_reflect(&format!("upconv.{i}.0"), x)?;
        x = dec.g.elu(x)?;
        x = dec.g.upsample2(x)?;
        // Skip from layer3 at H/8, layer2 at H/4, layer1 at H/2.
        if i >= 1 {
            x = dec.g.concat(&[x, feats[i]], 1)?;
        }
        x = dec.conv_reflect(&format!("upconv.{i}.1"), x)?;
        x = dec.g.elu(x)?;
        if i < cfg.scales {
            let d = dec.conv_reflect(&format!("dispconv.{i}"), x)?;
            disps[i] = Some(dec.g.sigmoid(d)?);
        }
    }
    Ok(disps.into_iter().map(|d| d.expect("every scale produced")).collect())
}

/// Target-to-source motion (N, 6) as axis-angle and translation, from the
/// target and source images (N, 3, H, W) each.
pub fn pose_forward<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    params: &Binding,
    target: Var,
    source: Var,
    mode: NormMode,
    records: &mut Vec<NormRecord>,
) -> Result<Var, EngineError> {
    let cfg = &model.config;
    check_input(g, target, 3, cfg)?;
    check_input(g, source, 3, cfg)?;
    let x = g.concat(&[target, source], 1)?;
    let feats = {
        let mut enc = Net {
            g: &mut *g,
            params,
            stats: &model.group(GroupName::PoseEncoder).norm_stats,
            group: GroupName::PoseEncoder,
            mode,
            eps: cfg.norm_eps,
            records: &mut *records,
        };
        enc.encoder(x)?
    };
    let empty = NamedTensors::new();
    let mut dec = Net {
        g,
        params,
        stats: &empty,
        group: GroupName::PoseDecoder,
        mode,
        eps: cfg.norm_eps,
        records,
    };
    let h = dec.conv("squeeze", feats[4], 1, 0)?;
    let h = dec.g.relu(h)?;
    let h = dec.conv("pose.0", h, 1, 1)?;
    let h = dec.g.relu(h)?;
    let h = dec.conv("pose.1", h, 1, 1)?;
    let h = dec.g.relu(h)?;
    let h = dec.g.mean_axes(h, &[2, 3])?;
    let out = dec.conv("pose.2", h, 1, 0)?;
    let n = dec.g.shape(out)[0];
    let out = dec.g.reshape(out, &[n, 6])?;
    dec.g.scale(out, cfg.pose_scale)
}

fn check_input<T: Scalar>(g: &Graph<T>, x: Var, channels: usize, cfg: &ModelConfig) -> Result<(), EngineError> {
    match g.shape(x) {
        [_, c, h, w] if *c == channels && *h == cfg.height && *w == cfg.width => Ok(()),
        s => Err(EngineError::Shape(format!(
            "network input {s:?}, expected (N, {channels}, {}, {})",
            cfg.height, cfg.width
        ))),
    }
}

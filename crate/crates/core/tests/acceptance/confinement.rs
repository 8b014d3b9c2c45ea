//! Adaptation touches exactly the masked tensors.

use adaptdepth::adapt::{
    adapt_instance_model, adapt_sequential, AdaptConfig, Component, ComponentMask, Supervision,
};
use adaptdepth::scenes::CorridorRecipe;
use adaptdepth::{GroupName, Model, ModelConfig};

use crate::common::{corridor, interior, Verdict};

pub fn desk_config() -> ModelConfig {
    ModelConfig {
        width: 96,
        height: 32,
        encoder_widths: [8, 16, 32, 64],
        decoder_widths: [8, 16, 32, 64],
        pose_hidden: 32,
        ..ModelConfig::default()
    }
}

/// Tensors that differ bitwise between two models, as (group, name, is norm stat).
fn changed(a: &Model<f32>, b: &Model<f32>) -> Vec<(GroupName, String, bool)> {
    let mut out = Vec::new();
    for name in GroupName::ALL {
        let (ga, gb) = (a.group(name), b.group(name));
        for (stat, ta, tb) in [(false, &ga.tensors, &gb.tensors), (true, &ga.norm_stats, &gb.norm_stats)] {
            for (k, va) in ta {
                let vb = &tb[k];
                if va.data().iter().zip(vb.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    out.push((name, k.clone(), stat));
                }
            }
        }
    }
    out
}

/// Violations of confinement: changes outside the mask, or to frozen stats.
fn leaks(mask: &ComponentMask, diff: &[(GroupName, String, bool)]) -> Vec<String> {
    diff.iter()
        .filter(|(g, k, stat)| {
            if *stat {
                mask.freeze_norm_stats || !mask.touches(*g)
            } else {
                !mask.selects(*g, k)
            }
        })
        .map(|(g, k, _)| format!("{g}/{k}"))
        .collect()
}

pub fn run() -> Verdict {
    let mut v = Verdict::default();
    let dir = tempfile::tempdir().unwrap();
    let mut recipe = CorridorRecipe::new(41, 96, 32, 8);
    recipe.stereo_baseline = Some(0.3);
    let bundles = interior(corridor(&recipe, dir.path()));
    let base = Model::<f32>::init(desk_config(), 4).unwrap();
    let pristine = base.clone();

    let mut masks: Vec<ComponentMask> = GroupName::ALL.iter().map(|&g| ComponentMask::groups(&[g])).collect();
    masks.push(ComponentMask::new([Component::FirstLayer(GroupName::DepthEncoder)]).unwrap());
    masks.push(ComponentMask::new([Component::LastBlock(GroupName::PoseEncoder)]).unwrap());
    masks.push(ComponentMask::encoders());
    masks.push(ComponentMask::whole_network());
    let mut thawed = ComponentMask::encoders();
    thawed.freeze_norm_stats = false;
    masks.push(thawed);

    for mask in &masks {
        let cfg = AdaptConfig {
            steps: 3,
            mask: mask.clone(),
            ..AdaptConfig::instance()
        };
        let (_, adapted) = adapt_instance_model(&base, &bundles[0], &cfg).unwrap();
        let diff = changed(&base, &adapted);
        let bad = leaks(mask, &diff);
        let moved = GroupName::ALL
            .iter()
            .filter(|&&g| mask.touches(g))
            .all(|&g| diff.iter().any(|(dg, _, stat)| *dg == g && !stat));
        let label = format!(
            "instance, mask {}{}",
            mask.label(),
            if mask.freeze_norm_stats { "" } else { ", stats live" }
        );
        v.check(
            label,
            bad.is_empty() && moved,
            format!("{} tensors changed, leaks {:?}, every masked group moved: {moved}", diff.len(), bad),
        );
    }

    let mask = ComponentMask::groups(&[GroupName::DepthDecoder, GroupName::PoseEncoder]);
    let cfg = AdaptConfig {
        mask: mask.clone(),
        ..AdaptConfig::sequential()
    };
    let seq = adapt_sequential(&base, &bundles[..4], &cfg).unwrap();
    let diff = changed(&base, &seq.model);
    let bad = leaks(&mask, &diff);
    v.check(
        "sequential over 4 frames, mask depth_decoder+pose_encoder",
        bad.is_empty() && !diff.is_empty(),
        format!("{} tensors changed, leaks {:?}", diff.len(), bad),
    );

    let cfg = AdaptConfig {
        steps: 3,
        mask: ComponentMask::whole_network(),
        supervision: Supervision::Stereo,
        ..AdaptConfig::instance()
    };
    let (_, adapted) = adapt_instance_model(&base, &bundles[0], &cfg).unwrap();
    let diff = changed(&base, &adapted);
    let pose: Vec<_> = diff
        .iter()
        .filter(|(g, _, _)| matches!(g, GroupName::PoseEncoder | GroupName::PoseDecoder))
        .collect();
    let depth_moved = diff.iter().any(|(g, _, _)| *g == GroupName::DepthEncoder);
    v.check(
        "stereo supervision with a whole-network mask",
        pose.is_empty() && depth_moved,
        format!("{} pose tensors changed, depth encoder moved: {depth_moved}", pose.len()),
    );

    v.check(
        "base model untouched by all runs",
        base == pristine && changed(&base, &pristine).is_empty(),
        "bitwise compare against a copy taken before adapting",
    );
    v
}

//! Warp and loss identities.

use adaptdepth::adapt::{forward, Batch, Supervision, TemporalSources};
use adaptdepth::autodiff::{Graph, NormMode};
use adaptdepth::geometry::invert_pose;
use adaptdepth::losses::{min_reprojection, photometric_pe, smoothness, ssim};
use adaptdepth::scenes::{render, visibility_mask, CorridorRecipe, FrameBundle};
use adaptdepth::warp::warp_image;
use adaptdepth::{CameraIntrinsics, LossWeights, Model, ModelConfig, Pose, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::Verdict;

const BORDER: usize = 4;

pub fn warps() -> Verdict {
    let mut v = Verdict::default();
    let spec = CorridorRecipe::new(31, 96, 32, 6).build().unwrap();
    let k = spec.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let frame = render(&spec, 2).unwrap();
    let depth = Tensor::<f32>::from_fn(&[1, 1, 32, 96], |_| rng.random_range(0.5..40.0));
    let out = warp_image(&frame.image, &depth, &Pose::identity(), &k).unwrap();
    let same = out.data().iter().zip(frame.image.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    v.check("identity pose reproduces the source bit for bit", same, "random depth, f32");

    // Ramp image I(u) = u reads back the sampled x coordinate directly.
    let (w, h) = (96, 32);
    let ramp = Tensor::<f64>::from_fn(&[1, 1, h, w], |i| (i % w) as f64);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d: f64 = rng.random_range(2.0..20.0);
        let t: f64 = rng.random_range(-0.5..0.5);
        let plane = Tensor::full(&[1, 1, h, w], d);
        // Source camera sits t to the right of the target camera.
        let out = warp_image(&ramp, &plane, &Pose::from_translation([-t, 0.0, 0.0]), &k).unwrap();
        let shift = k.fx * t / d;
        for y in 0..h {
            for x in 0..w {
                let src = x as f64 - shift;
                if src < 1.0 || src > (w - 2) as f64 {
                    continue;
                }
                let measured = x as f64 - out.data()[y * w + x];
                worst = worst.max((measured - shift).abs());
            }
        }
    }
    v.check(
        "plane-shift law over 20 random (d, t_x)",
        worst < 0.1,
        format!("max deviation {worst:.2e} px"),
    );

    let mut residuals = Vec::new();
    for t in 0..5 {
        let target = render(&spec, t).unwrap();
        let source = render(&spec, t + 1).unwrap();
        let src_pose = spec.camera_pose(t + 1).unwrap();
        let rel = invert_pose(&src_pose).compose(&spec.camera_pose(t).unwrap());
        let warped = warp_image(&source.image.cast::<f64>(), &target.depth.cast(), &rel, &k).unwrap();
        let visible = visibility_mask(&spec, t, &src_pose).unwrap();
        let (mut e, mut n) = (0.0, 0usize);
        for y in BORDER..h - BORDER {
            for x in BORDER..w - BORDER {
                if !visible[y * w + x] {
                    continue;
                }
                for c in 0..3 {
                    let i = (c * h + y) * w + x;
                    e += (warped.data()[i] - target.image.data()[i] as f64).abs();
                    n += 1;
                }
            }
        }
        residuals.push(e / n as f64);
    }
    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    v.check(
        "ground-truth warp residual off disocclusions",
        worst < 0.01,
        format!("worst mean |I_hat - I| {worst:.4} over {} pairs", residuals.len()),
    );
    v
}

fn static_bundle(k: CameraIntrinsics, image: &Tensor<f32>) -> FrameBundle {
    FrameBundle {
        index: 0,
        target: image.clone(),
        prev: Some(image.clone()),
        next: Some(image.clone()),
        stereo: None,
        intrinsics: k,
        depth: None,
        prev_from_target: None,
        next_from_target: None,
        stereo_from_target: None,
    }
}

pub fn losses() -> Verdict {
    let mut v = Verdict::default();
    let spec = CorridorRecipe::new(32, 96, 32, 4).build().unwrap();
    let k = spec.intrinsics;
    let weights = LossWeights::default();

    let frame = render(&spec, 1).unwrap();
    let bundle = static_bundle(k, &frame.image);
    let batch = Batch::<f32>::new(&[&bundle], Supervision::Mono, TemporalSources::Both, &weights).unwrap();
    let config = ModelConfig {
        width: 96,
        height: 32,
        encoder_widths: [8, 16, 32, 64],
        decoder_widths: [8, 16, 32, 64],
        pose_hidden: 32,
        pose_scale: 1.0,
        ..ModelConfig::default()
    };
    let (mut photo, mut ratio) = (0.0f64, 0.0f64);
    for seed in 0..3 {
        let model = Model::<f32>::init(config.clone(), seed).unwrap();
        let fw = forward(&model, &batch, &weights, NormMode::Train, &|_, _| false).unwrap();
        photo = photo.max(fw.breakdown.photometric);
        ratio = ratio.max(fw.breakdown.mask_ratio);
    }
    v.check(
        "static scene: photometric term exactly zero via auto-mask",
        photo == 0.0 && ratio == 0.0,
        format!("max E_p {photo}, max mask ratio {ratio} over 3 random models"),
    );

    let x: Tensor<f64> = frame.image.cast();
    let mut g = Graph::new();
    let a = g.constant(x.clone()).unwrap();
    let b = g.constant(x.clone()).unwrap();
    let s = ssim(&mut g, a, b).unwrap();
    let off = g.value(s).data().iter().map(|&s| (s - 1.0).abs()).fold(0.0, f64::max);
    v.check("SSIM(x, x) = 1", off == 0.0, format!("max |SSIM - 1| = {off:e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let disp = Tensor::<f64>::from_fn(&[1, 1, 32, 96], |_| rng.random_range(0.05..1.0));
    let smooth_of = |d: &Tensor<f64>| {
        let mut g = Graph::new();
        let dv = g.constant(d.clone()).unwrap();
        let s = smoothness(&mut g, dv, &x, weights.lambda_smooth).unwrap();
        g.value(s).data()[0]
    };
    let base = smooth_of(&disp);
    let drift = [1e-3, 0.37, 2.0, 55.0]
        .iter()
        .map(|&c| (smooth_of(&disp.map(|d| d * c)) - base).abs() / base)
        .fold(0.0, f64::max);
    v.check(
        "smoothness invariant to disparity scale",
        drift < 1e-6,
        format!("max relative change {drift:.1e} over c in {{1e-3, 0.37, 2, 55}}"),
    );

    // Error maps of both neighbours under ground-truth geometry.
    let mut violations = 0;
    let mut pixels = 0;
    for t in 1..3 {
        let target = render(&spec, t).unwrap();
        let mut g = Graph::new();
        let tv = g.constant(target.image.cast::<f64>()).unwrap();
        let mut maps = Vec::new();
        for s in [t - 1, t + 1] {
            let rel = invert_pose(&spec.camera_pose(s).unwrap()).compose(&spec.camera_pose(t).unwrap());
            let img = render(&spec, s).unwrap().image.cast::<f64>();
            let warped = warp_image(&img, &target.depth.cast(), &rel, &k).unwrap();
            let wv = g.constant(warped).unwrap();
            maps.push(photometric_pe(&mut g, tv, wv, weights.beta).unwrap());
        }
        let m = min_reprojection(&mut g, &maps).unwrap();
        let (e0, e1, em) = (g.value(maps[0]), g.value(maps[1]), g.value(m));
        for i in 0..em.len() {
            pixels += 1;
            if em.data()[i] > 0.5 * (e0.data()[i] + e1.data()[i]) {
                violations += 1;
            }
        }
    }
    v.check(
        "per-pixel minimum never exceeds the mean over sources",
        violations == 0,
        format!("{violations} of {pixels} pixels"),
    );
    v
}

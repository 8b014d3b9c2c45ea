use std::fs;
use std::path::Path;

use adaptdepth::geometry::invert_pose;
use adaptdepth::scenes::*;
use adaptdepth::warp::warp_image;
use adaptdepth::Tensor;

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn count(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn fronto_parallel_plane_has_exact_depth() {
    let spec = fronto_parallel_scene(48, 16, 5.0, 0.0, 2, 3);
    let f = render(&spec, 0).unwrap();
    assert!(f.depth.data().iter().all(|&d| d == 5.0));
}

#[test]
fn translated_camera_shifts_plane_image() {
    // A plane at depth d seen after an x translation t moves by fx·t/d px.
    let (w, h, d, t) = (64, 16, 6.0, 0.3);
    let spec = fronto_parallel_scene(w, h, d, t, 2, 9);
    let a = render(&spec, 0).unwrap();
    let b = render(&spec, 1).unwrap();
    let fx = spec.intrinsics.fx;
    let shift = fx * t / d;
    // Frame 0 pixel x sees what frame 1 sees at x − shift.
    let (mut err, mut n) = (0.0, 0);
    let (ia, ib) = (a.image.data(), b.image.data());
    for y in 0..h {
        for x in 8..w - 8 {
            let src = x as f64 - shift;
            let x0 = src.floor() as usize;
            let fr = src - x0 as f64;
            for ch in 0..3 {
                let row = (ch * h + y) * w;
                let v = (1.0 - fr) * ib[row + x0] as f64 + fr * ib[row + x0 + 1] as f64;
                err += (v - ia[row + x] as f64).abs();
                n += 1;
            }
        }
    }
    assert!(err / (n as f64) < 0.01, "{}", err / n as f64);
}

#[test]
fn ground_truth_warp_explains_the_image() {
    for (seed, w, h) in [(21, 96, 32), (22, 192, 64)] {
        check_ground_truth_warp(&CorridorRecipe::new(seed, w, h, 4).build().unwrap());
    }
}

fn check_ground_truth_warp(spec: &SceneSpec) {
    let k = spec.intrinsics;
    for t in 0..3 {
        let target = render(spec, t).unwrap();
        let source = render(spec, t + 1).unwrap();
        let src_pose = spec.camera_pose(t + 1).unwrap();
        let rel = invert_pose(&src_pose).compose(&spec.camera_pose(t).unwrap());
        let depth: Tensor<f64> = target.depth.cast();
        let warped = warp_image(&source.image.cast::<f64>(), &depth, &rel, &k).unwrap();
        let vis = visibility_mask(spec, t, &src_pose).unwrap();
        let (w, h) = (k.width, k.height);
        let (mut e, mut n) = (0.0, 0usize);
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                if !vis[y * w + x] {
                    continue;
                }
                for ch in 0..3 {
                    let i = (ch * h + y) * w + x;
                    e += (warped.data()[i] - target.image.data()[i] as f64).abs();
                    n += 1;
                }
            }
        }
        let mean = e / n as f64;
        assert!(n > 3 * (w - 8) * (h - 8) / 2, "too few visible pixels: {n}");
        assert!(mean < 0.01, "frame {t}: residual {mean}");
    }
}

#[test]
fn dataset_layout_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = CorridorRecipe::new(5, 32, 16, 100).build().unwrap();
    let m = generate_dataset(&spec, tmp.path()).unwrap();
    assert_eq!(count(&tmp.path().join("frames")), 100);
    assert_eq!(count(&tmp.path().join("depth")), 100);
    assert!(tmp.path().join("intrinsics.json").is_file());
    assert!(tmp.path().join("poses.csv").is_file());
    assert!(!tmp.path().join("frames_right").exists());
    assert_eq!(m.splits.train.len() + m.splits.val.len() + m.splits.test.len(), 100);
    assert!(!m.splits.val.is_empty() && !m.splits.test.is_empty());

    let ds = Dataset::load(tmp.path()).unwrap();
    for i in [0, 37, 99] {
        let r = render(&spec, i).unwrap();
        assert_eq!(ds.frames[i].image, r.image);
        assert_eq!(ds.frames[i].depth.as_ref(), Some(&r.depth));
    }
    let b = ds.bundle(0);
    assert!(b.prev.is_none() && b.next.is_some());
    let rel = b.next_from_target.unwrap();
    let expect = invert_pose(&spec.camera_pose(1).unwrap()).compose(&spec.camera_pose(0).unwrap());
    for i in 0..3 {
        assert!((rel.translation[i] - expect.translation[i]).abs() < 1e-9);
    }

    let again = tempfile::tempdir().unwrap();
    generate_dataset(&spec, again.path()).unwrap();
    assert_eq!(dir_digest(tmp.path()), dir_digest(again.path()));
}

#[test]
fn stereo_dataset_records_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let mut recipe = CorridorRecipe::new(2, 32, 16, 3);
    recipe.stereo_baseline = Some(0.54);
    let spec = recipe.build().unwrap();
    generate_dataset(&spec, tmp.path()).unwrap();
    assert_eq!(count(&tmp.path().join("frames_right")), 3);
    let left = fs::read_to_string(tmp.path().join("poses.csv")).unwrap();
    let right = fs::read_to_string(tmp.path().join("poses_right.csv")).unwrap();
    for (l, r) in left.lines().skip(1).zip(right.lines().skip(1)) {
        let lv: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        let rv: Vec<f64> = r.split(',').map(|s| s.parse().unwrap()).collect();
        let pose = adaptdepth::geometry::pose_vec_to_pose(&adaptdepth::PoseVector::from_slice(&[
            lv[4], lv[5], lv[6], lv[1], lv[2], lv[3],
        ]));
        let expect = pose.apply([0.54, 0.0, 0.0]);
        for i in 0..3 {
            assert!((rv[1 + i] - expect[i]).abs() < 1e-12);
        }
    }
    let b = Dataset::load(tmp.path()).unwrap().bundle(1);
    assert!(b.stereo.is_some());
    assert_eq!(b.stereo_from_target.unwrap().translation, [-0.54, 0.0, 0.0]);
}

#[test]
fn stationary_sequences_are_filtered() {
    let tmp = tempfile::tempdir().unwrap();
    let mut recipe = CorridorRecipe::new(8, 32, 16, 5);
    recipe.speed = 0.0;
    recipe.sway = 0.0;
    generate_dataset(&recipe.build().unwrap(), tmp.path()).unwrap();
    let opts = LoadOptions {
        split: None,
        drop_stationary: true,
    };
    assert!(load_sequence(tmp.path(), &opts).unwrap().is_empty());
    assert_eq!(load_sequence(tmp.path(), &LoadOptions::default()).unwrap().len(), 5);
}

#[test]
fn missing_depth_is_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    generate_dataset(&CorridorRecipe::new(1, 32, 16, 3).build().unwrap(), tmp.path()).unwrap();
    fs::remove_dir_all(tmp.path().join("depth")).unwrap();
    let bundles = load_sequence(tmp.path(), &LoadOptions::default()).unwrap();
    assert_eq!(bundles.len(), 3);
    assert!(bundles.iter().all(|b| b.depth.is_none()));
}

#[test]
fn malformed_layouts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    generate_dataset(&CorridorRecipe::new(1, 32, 16, 2).build().unwrap(), tmp.path()).unwrap();
    fs::write(tmp.path().join("frames").join(frame_name(1, "ppm")), b"P6\n16 16\n255\n").unwrap();
    assert!(matches!(Dataset::load(tmp.path()), Err(DatasetError::Format { .. })));
    fs::remove_file(tmp.path().join("manifest.json")).unwrap();
    assert!(matches!(Dataset::load(tmp.path()), Err(DatasetError::Io { .. })));
}

#[test]
fn co_moving_object_stays_put_in_the_image() {
    let mut recipe = CorridorRecipe::new(3, 48, 16, 3);
    recipe.co_moving_object = true;
    recipe.sway = 0.0;
    let spec = recipe.build().unwrap();
    let a = render(&spec, 0).unwrap();
    let b = render(&spec, 2).unwrap();
    // The object sits in front of the camera at a fixed 4 m offset.
    let (w, h) = (48, 16);
    let c = (h / 2 + 1) * w + w / 2 + 2;
    assert_eq!(a.depth.data()[c], b.depth.data()[c]);
}

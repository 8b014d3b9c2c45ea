//! Per-op gradient checks against central differences (f64) plus forward
//! identities of the engine.

use adaptdepth::autodiff::gradcheck::{finite_difference_check, Probe};
use adaptdepth::autodiff::{EngineError, Graph, NormMode, ProjectionParams, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, EngineError>;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Checks d/d(input k) of sum(op(inputs) ⊙ r) for every input.
fn check_op(inputs: &[Tensor<f64>], build: &Build, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let out = build(&mut g, &vars).unwrap();
        g.shape(out).to_vec()
    };
    let weights = random(&probe_shape, -1.0, 1.0, &mut rng);
    for k in 0..inputs.len() {
        let eval = |x: &Tensor<f64>, want: bool| -> Result<Probe, EngineError> {
            let mut g = Graph::with_kink_tracking();
            let mut vars = Vec::new();
            for (j, t) in inputs.iter().enumerate() {
                let v = if j == k { x.clone() } else { t.clone() };
                vars.push(g.leaf(v, j == k)?);
            }
            let out = build(&mut g, &vars)?;
            let w = g.constant(weights.clone())?;
            let prod = g.mul(out, w)?;
            let loss = g.sum(prod)?;
            let value = g.value(loss).data()[0];
            let sig = g.kink_signature();
            let grad = if want {
                let mut grads = g.backward(loss)?;
                Some(
                    grads
                        .take(vars[k])
                        .unwrap_or_else(|| Tensor::zeros(x.shape())),
                )
            } else {
                None
            };
            Ok(Probe {
                value,
                grad,
                signature: sig,
            })
        };
        let report = finite_difference_check(eval, &inputs[k], 1e-5, None).unwrap();
        assert!(
            report.max_rel_err < tol,
            "input {k}: {report:?} (tol {tol})"
        );
        assert!(report.checked > 0, "input {k}: nothing checked");
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
    let b = random(&[2, 3, 4, 5], 0.5, 2.0, &mut rng);
    let col = random(&[1, 3, 1, 1], 0.5, 2.0, &mut rng);
    let row = random(&[2, 1, 4, 5], 0.5, 2.0, &mut rng);
    check_op(&[a.clone(), b.clone()], &|g, v| g.add(v[0], v[1]), 1e-7);
    check_op(&[a.clone(), b.clone()], &|g, v| g.sub(v[0], v[1]), 1e-7);
    check_op(&[a.clone(), b.clone()], &|g, v| g.mul(v[0], v[1]), 1e-7);
    check_op(&[a.clone(), b.clone()], &|g, v| g.div(v[0], v[1]), 1e-6);
    check_op(&[a.clone(), col.clone()], &|g, v| g.mul(v[0], v[1]), 1e-7);
    check_op(&[a.clone(), row.clone()], &|g, v| g.div(v[0], v[1]), 1e-6);
    check_op(&[col.clone(), a.clone()], &|g, v| g.sub(v[0], v[1]), 1e-7);
    check_op(&[a.clone()], &|g, v| g.scale(v[0], -2.5), 1e-7);
    check_op(&[a.clone()], &|g, v| g.add_scalar(v[0], 0.3), 1e-7);
    check_op(&[a.clone()], &|g, v| g.abs(v[0]), 1e-7);
    check_op(&[a.clone()], &|g, v| g.relu(v[0]), 1e-7);
    check_op(&[a.clone()], &|g, v| g.elu(v[0]), 1e-6);
    check_op(&[a], &|g, v| g.sigmoid(v[0]), 1e-6);
}

#[test]
fn conv_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 7, 6], -1.0, 1.0, &mut rng);
    let w3 = random(&[4, 3, 3, 3], -0.5, 0.5, &mut rng);
    let w1 = random(&[4, 3, 1, 1], -0.5, 0.5, &mut rng);
    let b = random(&[4], -0.5, 0.5, &mut rng);
    for stride in [1, 2] {
        check_op(
            &[x.clone(), w3.clone(), b.clone()],
            &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, 1),
            1e-6,
        );
        check_op(
            &[x.clone(), w1.clone()],
            &move |g, v| g.conv2d(v[0], v[1], None, stride, 0),
            1e-6,
        );
    }
}

#[test]
fn batch_norm_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 4, 4], -1.0, 2.0, &mut rng);
    let gamma = random(&[3], 0.5, 1.5, &mut rng);
    let beta = random(&[3], -0.5, 0.5, &mut rng);
    let rm = vec![0.1, -0.2, 0.3];
    let rv = vec![0.9, 1.2, 0.7];
    for mode in [NormMode::Train, NormMode::Eval] {
        let (rm, rv) = (rm.clone(), rv.clone());
        check_op(
            &[x.clone(), gamma.clone(), beta.clone()],
            &move |g, v| g.batch_norm(v[0], v[1], v[2], &rm, &rv, mode, 1e-5),
            1e-5,
        );
    }
}

#[test]
fn batch_norm_train_statistics() {
    let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x).unwrap();
    let gm = g.constant(Tensor::ones(&[1])).unwrap();
    let bt = g.constant(Tensor::zeros(&[1])).unwrap();
    let y = g
        .batch_norm(xv, gm, bt, &[0.0], &[1.0], NormMode::Train, 0.0)
        .unwrap();
    let st = g.batch_stats(y).unwrap();
    assert_eq!(st.mean, vec![4.0]);
    // Biased variance 5, unbiased 20/3.
    assert!((st.var[0] - 20.0 / 3.0).abs() < 1e-12);
    let out = g.value(y).data();
    assert!((out[0] + 3.0 / 5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn spatial_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 2, 5, 6], -1.0, 1.0, &mut rng);
    check_op(&[x.clone()], &|g, v| g.avg_pool3(v[0]), 1e-7);
    check_op(&[x.clone()], &|g, v| g.reflect_pad(v[0], 1), 1e-7);
    check_op(&[x.clone()], &|g, v| g.upsample2(v[0]), 1e-7);
    check_op(&[x.clone()], &|g, v| g.min_channels(v[0]), 1e-7);
    check_op(&[x.clone()], &|g, v| g.mean(v[0]), 1e-7);
    check_op(&[x.clone()], &|g, v| g.mean_axes(v[0], &[1]), 1e-7);
    check_op(&[x.clone()], &|g, v| g.mean_axes(v[0], &[2, 3]), 1e-7);
    check_op(&[x.clone()], &|g, v| g.narrow(v[0], 1, 1, 1), 1e-7);
    check_op(&[x.clone()], &|g, v| g.narrow(v[0], 3, 2, 3), 1e-7);
    check_op(&[x.clone()], &|g, v| g.reshape(v[0], &[4, 30]), 1e-7);
    let y = random(&[2, 3, 5, 6], -1.0, 1.0, &mut rng);
    check_op(&[x.clone(), y.clone()], &|g, v| g.concat(&[v[0], v[1]], 1), 1e-7);
    let z = random(&[2, 2, 5, 2], -1.0, 1.0, &mut rng);
    check_op(&[x, z], &|g, v| g.concat(&[v[0], v[1]], 3), 1e-7);
}

#[test]
fn grid_sample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random(&[2, 3, 6, 7], 0.0, 1.0, &mut rng);
    // Include positions beyond the border to exercise clamping.
    let grid = random(&[2, 2, 4, 5], -1.2, 1.2, &mut rng);
    check_op(&[img, grid], &|g, v| g.grid_sample(v[0], v[1]), 1e-6);
}

#[test]
fn pose_matrix_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = random(&[3, 6], -1.0, 1.0, &mut rng);
    check_op(&[v], &|g, v| g.pose_matrix(v[0]), 1e-6);
    // Small-angle regime.
    let v = random(&[2, 6], -1e-3, 1e-3, &mut rng);
    check_op(&[v], &|g, v| g.pose_matrix(v[0]), 1e-5);
}

#[test]
fn project_depth_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ProjectionParams {
        fx: 5.0,
        fy: 6.0,
        cx: 2.5,
        cy: 2.0,
        width: 6,
        height: 5,
        z_min: 1e-3,
    };
    let depth = random(&[2, 1, 5, 6], 1.0, 4.0, &mut rng);
    let pose = random(&[2, 6], -0.1, 0.1, &mut rng);
    check_op(
        &[depth, pose],
        &move |g, v| {
            let m = g.pose_matrix(v[1])?;
            g.project_depth(v[0], m, params)
        },
        1e-6,
    );
}

#[test]
fn forward_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.cast()).unwrap();
    let z = g.constant(Tensor::zeros(&[1, 2, 6, 6])).unwrap();
    let s = g.add(xv, z).unwrap();
    assert_eq!(g.value(s), g.value(xv));
    let zero = g.constant(Tensor::zeros(&[3, 3])).unwrap();
    let sg = g.sigmoid(zero).unwrap();
    assert!(g.value(sg).data().iter().all(|&v| v == 0.5));

    // Averaging kernel over a constant image keeps the interior value.
    let c = g.constant(Tensor::full(&[1, 1, 6, 6], 0.7)).unwrap();
    let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0)).unwrap();
    let y = g.conv2d(c, k, None, 1, 1).unwrap();
    let out = g.value(y);
    for r in 1..5 {
        for q in 1..5 {
            assert!((out.at4(0, 0, r, q) - 0.7).abs() < 1e-6);
        }
    }
}

#[test]
fn backward_contracts() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true).unwrap();
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    assert_eq!(g.backward(s).unwrap_err(), EngineError::Consumed);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_fn(&[4], |i| i as f64 - 1.5), true).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    let grads = g.backward(half).unwrap();
    assert_eq!(grads.get(x).unwrap(), g.value(x));

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::ones(&[3]), true).unwrap();
    assert!(matches!(g.backward(x), Err(EngineError::NotScalar(_))));

    // Constants receive nothing.
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::ones(&[3]), true).unwrap();
    let c = g.constant(Tensor::ones(&[3])).unwrap();
    let p = g.mul(x, c).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(c).is_none());
}

#[test]
fn non_finite_is_an_error() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::ones(&[2])).unwrap();
    let z = g.constant(Tensor::zeros(&[2])).unwrap();
    assert_eq!(g.div(a, z).unwrap_err(), EngineError::NonFinite("div"));
    assert!(g.leaf(Tensor::full(&[1], f64::NAN), true).is_err());
}

#[test]
fn shape_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::ones(&[2, 3])).unwrap();
    let b = g.constant(Tensor::ones(&[3, 2])).unwrap();
    assert!(matches!(g.add(a, b), Err(EngineError::Shape(_))));
    let img = g.constant(Tensor::ones(&[1, 2, 4, 4])).unwrap();
    let w = g.constant(Tensor::ones(&[1, 3, 3, 3])).unwrap();
    assert!(matches!(g.conv2d(img, w, None, 1, 1), Err(EngineError::Shape(_))));
}

#[test]
fn min_channels_ties_go_to_first() {
    let mut g = Graph::<f64>::new();
    let x = g
        .leaf(Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 2.0, 1.0, 0.5]).unwrap(), true)
        .unwrap();
    let m = g.min_channels(x).unwrap();
    assert_eq!(g.value(m).data(), &[1.0, 0.5]);
    let s = g.sum(m).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn determinism() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 3, 8, 8], -1.0, 1.0, &mut rng).cast::<f32>();
        let w = random(&[4, 3, 3, 3], -1.0, 1.0, &mut rng).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x, false).unwrap();
        let wv = g.leaf(w, true).unwrap();
        let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
        let e = g.elu(y).unwrap();
        let s = g.mean(e).unwrap();
        let grads = g.backward(s).unwrap();
        (g.value(s).clone(), grads.get(wv).unwrap().clone())
    };
    assert_eq!(run(), run());
}

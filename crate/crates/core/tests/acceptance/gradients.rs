//! Full-pipeline loss gradients against central differences in f64.

use adaptdepth::adapt::{direct_objective_in, forward_in, Batch, Supervision, TemporalSources};
use adaptdepth::autodiff::gradcheck::{finite_difference_check, significant_coordinates, FdReport, Probe};
use adaptdepth::autodiff::{EngineError, Graph, NormMode};
use adaptdepth::scenes::CorridorRecipe;
use adaptdepth::{GroupName, LossWeights, Model, ModelConfig, ParameterGroup, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::common::{corridor, interior, Verdict};

const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;
const COORDS: usize = 64;
const FLOOR: f64 = 1e-2;

fn flatten(group: &ParameterGroup<f64>) -> Tensor<f64> {
    let data: Vec<f64> = group.tensors.values().flat_map(|t| t.data().to_vec()).collect();
    let n = data.len();
    Tensor::from_vec(&[n], data).unwrap()
}

fn unflatten(group: &mut ParameterGroup<f64>, x: &Tensor<f64>) {
    let mut at = 0;
    for t in group.tensors.values_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&x.data()[at..at + n]);
        at += n;
    }
}

fn concat(tensors: &[Tensor<f64>]) -> Tensor<f64> {
    let data: Vec<f64> = tensors.iter().flat_map(|t| t.data().to_vec()).collect();
    let n = data.len();
    Tensor::from_vec(&[n], data).unwrap()
}

fn check<F>(mut f: F, point: &Tensor<f64>, seed: u64) -> Result<FdReport, EngineError>
where
    F: FnMut(&Tensor<f64>, bool) -> Result<Probe, EngineError>,
{
    let base = f(point, true)?;
    let grad = base.grad.expect("base gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = significant_coordinates(&grad, COORDS, FLOOR, &mut rng);
    finite_difference_check(f, point, EPS, Some(&coords))
}

fn group_report(model: &Model<f64>, batch: &Batch<f64>, weights: &LossWeights, name: GroupName) -> FdReport {
    let f = |x: &Tensor<f64>, want: bool| -> Result<Probe, EngineError> {
        let mut m = model.clone();
        unflatten(m.group_mut(name), x);
        let mut fw = forward_in(
            Graph::with_kink_tracking(),
            &m,
            batch,
            weights,
            NormMode::Train,
            &|g, _| want && g == name,
        )?;
        let value = fw.graph.value(fw.total).data()[0];
        let signature = fw.graph.kink_signature();
        let grad = if want {
            Some(flatten(&ParameterGroup {
                tensors: fw.gradients()?.swap_remove(name as usize),
                ..m.group(name).clone()
            }))
        } else {
            None
        };
        Ok(Probe { value, grad, signature })
    };
    check(f, &flatten(model.group(name)), name as u64).unwrap()
}

fn pose_report(model: &Model<f64>, batch: &Batch<f64>, weights: &LossWeights) -> FdReport {
    let sources = batch.temporal.len();
    let n = batch.batch_size();
    let fw = forward_in(Graph::new(), model, batch, weights, NormMode::Eval, &|_, _| false).unwrap();
    let depth = fw.depth(model).unwrap();
    // A motion large enough that the warp actually moves pixels.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Tensor::from_fn(&[sources * n * 6], |i| {
        let scale = if i % 6 < 3 { 0.02 } else { 0.2 };
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    });
    let split = |x: &Tensor<f64>| -> Vec<Tensor<f64>> {
        x.data()
            .chunks(n * 6)
            .map(|c| Tensor::from_vec(&[n, 6], c.to_vec()).unwrap())
            .collect()
    };
    let range = model.config.range;
    let f = |x: &Tensor<f64>, want: bool| -> Result<Probe, EngineError> {
        let (loss, grads, signature) =
            direct_objective_in(Graph::with_kink_tracking(), batch, &depth, &split(x), weights, &range, want)?;
        Ok(Probe {
            value: loss.total,
            grad: grads.map(|(_, gp)| concat(&gp)),
            signature,
        })
    };
    check(f, &start, 99).unwrap()
}

pub fn run() -> Verdict {
    let mut v = Verdict::default();
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let recipe = CorridorRecipe::new(21, 16, 16, 5);
    let bundles = interior(corridor(&recipe, dir.path()));
    let refs: Vec<_> = bundles.iter().take(2).collect();
    let weights = LossWeights::default();
    let batch = Batch::<f64>::new(&refs, Supervision::Mono, TemporalSources::Both, &weights).unwrap();
    let config = ModelConfig {
        width: 16,
        height: 16,
        encoder_widths: [4, 4, 8, 8],
        decoder_widths: [4, 4, 8, 8],
        pose_hidden: 8,
        pose_scale: 1.0,
        ..ModelConfig::default()
    };
    let model: Model<f64> = Model::<f32>::init(config, 13).unwrap().cast();
    let fw = forward_in(Graph::new(), &model, &batch, &weights, NormMode::Train, &|_, _| false).unwrap();
    v.check(
        "loss exercises the photometric term",
        fw.breakdown.mask_ratio > 0.1,
        format!("auto-mask keeps {:.2} of pixels", fw.breakdown.mask_ratio),
    );
    for name in GroupName::ALL {
        let r = group_report(&model, &batch, &weights, name);
        v.check(
            format!("{name} weights"),
            r.checked > 0 && r.max_rel_err < TOLERANCE,
            format!(
                "max rel err {:.2e} over {} coords ({} skipped at kinks)",
                r.max_rel_err, r.checked, r.skipped
            ),
        );
    }
    let r = pose_report(&model, &batch, &weights);
    v.check(
        "pose vector",
        r.checked > 0 && r.max_rel_err < TOLERANCE,
        format!("max rel err {:.2e} over {} coords ({} skipped)", r.max_rel_err, r.checked, r.skipped),
    );
    let secs = start.elapsed().as_secs_f64();
    v.check("runtime under 60 s", secs < 60.0, format!("{secs:.1}s"));
    v
}

//! Orderings and shapes of inference-time adaptation on the reference
//! checkpoint.

use std::sync::OnceLock;
use std::time::Instant;

use adaptdepth::adapt::{
    adapt_instance, adapt_instance_snapshots, adapt_instances, adapt_sequential, direct_optimize, network_outputs,
    predict_depth, AdaptConfig, ComponentMask, Supervision,
};
use adaptdepth::scenes::CorridorRecipe;
use adaptdepth::LossWeights;

use crate::common::{corridor, Verdict};
use crate::reference::{abs_rel, get, mean, outcome_abs_rel};

pub const LRS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const STEP_COUNTS: [usize; 6] = [5, 10, 25, 50, 100, 200];
/// Frames of the validation set used for the 200-step sweep.
pub const SWEEP_FRAMES: usize = 50;

/// Mean abs-rel of encoder adaptation at 10 steps for each learning rate.
struct LrSweep {
    means: Vec<f64>,
    diverged: Vec<usize>,
    seconds: f64,
}

static LR_SWEEP: OnceLock<LrSweep> = OnceLock::new();

fn instance(steps: usize, lr: f64, mask: ComponentMask) -> AdaptConfig {
    AdaptConfig {
        steps,
        lr,
        mask,
        ..AdaptConfig::instance()
    }
}

fn lr_sweep() -> &'static LrSweep {
    LR_SWEEP.get_or_init(|| {
        let r = get();
        let start = Instant::now();
        let mut means = Vec::new();
        let mut diverged = Vec::new();
        for lr in LRS {
            let cfg = instance(10, lr, ComponentMask::encoders());
            let out: Vec<_> = adapt_instances(&r.model, &r.val, &cfg, 1)
                .into_iter()
                .map(Result::unwrap)
                .collect();
            diverged.push(out.iter().filter(|o| o.diverged).count());
            means.push(mean(&outcome_abs_rel(&out, &r.val)));
        }
        LrSweep {
            means,
            diverged,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn encoders_at_lr(lr: f64) -> f64 {
    let i = LRS.iter().position(|&l| l == lr).expect("lr in sweep");
    lr_sweep().means[i]
}

pub fn table_one_ordering() -> Verdict {
    let mut v = Verdict::default();
    let r = get();
    let start = Instant::now();
    let base = mean(&r.baseline);
    let encoders = encoders_at_lr(0.1);
    let per_lr = lr_sweep().seconds / LRS.len() as f64;
    let cfg = instance(10, 0.1, ComponentMask::whole_network());
    let whole_out: Vec<_> = adapt_instances(&r.model, &r.val, &cfg, 1)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    let whole = mean(&outcome_abs_rel(&whole_out, &r.val));
    v.check(
        "encoders-only < baseline < whole network (10 steps, lr 0.1)",
        encoders < base && base < whole,
        format!("{encoders:.4} < {base:.4} < {whole:.4} over {} frames", r.val.len()),
    );
    let improved = r
        .baseline
        .iter()
        .zip(&encoder_outcomes_50())
        .filter(|(b, a)| a < b)
        .count();
    let share = improved as f64 / r.val.len() as f64;
    v.check(
        "50 steps at lr 0.1 improves abs-rel on at least 80% of frames",
        share >= 0.8,
        format!("{improved} of {} frames ({:.0}%)", r.val.len(), 100.0 * share),
    );
    let secs = start.elapsed().as_secs_f64() + per_lr;
    v.check("runtime under 15 min", secs < 900.0, format!("{secs:.0}s single-threaded"));
    v
}

/// Per-frame abs-rel after 50 encoder steps at lr 0.1 over the validation set.
fn encoder_outcomes_50() -> Vec<f64> {
    let r = get();
    let cfg = instance(50, 0.1, ComponentMask::encoders());
    r.val
        .iter()
        .map(|b| abs_rel(&adapt_instance(&r.model, b, &cfg).unwrap().depth, b))
        .collect()
}

pub fn lr_ordering() -> Verdict {
    let mut v = Verdict::default();
    let base = mean(&get().baseline);
    let sweep = lr_sweep();
    let best = (0..LRS.len())
        .min_by(|&a, &b| sweep.means[a].total_cmp(&sweep.means[b]))
        .unwrap();
    let table: Vec<String> = LRS
        .iter()
        .zip(&sweep.means)
        .zip(&sweep.diverged)
        .map(|((lr, m), d)| format!("{lr}: {m:.4} ({d} diverged)"))
        .collect();
    v.check(
        "abs-rel minimized at an interior learning rate",
        best != 0 && best != LRS.len() - 1,
        format!("best lr {} | {}", LRS[best], table.join(", ")),
    );
    let ten = sweep.means[LRS.len() - 1];
    v.check(
        "lr 10 worse than baseline",
        ten > base,
        format!("{ten:.4} vs baseline {base:.4}"),
    );
    v
}

pub fn best_lr() -> f64 {
    let sweep = lr_sweep();
    let best = (0..LRS.len())
        .min_by(|&a, &b| sweep.means[a].total_cmp(&sweep.means[b]))
        .unwrap();
    LRS[best]
}

/// Non-increasing up to some index `k` with `STEP_COUNTS[k] >= 25`, then
/// non-decreasing; returns the step count at the turn.
pub fn valley(curve: &[f64]) -> Option<usize> {
    (0..curve.len()).filter(|&k| STEP_COUNTS[k] >= 25).find(|&k| {
        curve[..=k].windows(2).all(|w| w[1] <= w[0]) && curve[k..].windows(2).all(|w| w[1] >= w[0])
    })
    .map(|k| STEP_COUNTS[k])
}

pub fn step_shape() -> Verdict {
    let mut v = Verdict::default();
    let r = get();
    let lr = best_lr();
    let frames = &r.val[..SWEEP_FRAMES];
    let cfg = instance(*STEP_COUNTS.last().unwrap(), lr, ComponentMask::encoders());
    let mut curve = vec![0.0; STEP_COUNTS.len()];
    for b in frames {
        let (_, snaps) = adapt_instance_snapshots(&r.model, b, &cfg, &STEP_COUNTS).unwrap();
        for (c, s) in curve.iter_mut().zip(&snaps) {
            *c += abs_rel(s, b) / frames.len() as f64;
        }
    }
    let base = mean(&r.baseline[..SWEEP_FRAMES]);
    let shown: Vec<String> = STEP_COUNTS
        .iter()
        .zip(&curve)
        .map(|(s, c)| format!("{s}: {c:.4}"))
        .collect();
    let turn = valley(&curve);
    v.check(
        "non-increasing up to some s* >= 25, non-decreasing after",
        turn.is_some(),
        format!(
            "lr {lr}, {} frames, baseline {base:.4} | {} | s* = {}",
            frames.len(),
            shown.join(", "),
            turn.map_or("none".into(), |s| s.to_string())
        ),
    );
    v
}

pub fn direct_null_result() -> Verdict {
    let mut v = Verdict::default();
    let r = get();
    let weights = LossWeights::default();
    let range = r.model.config.range;
    let base = mean(&r.baseline);
    let encoder_gain = base - encoders_at_lr(0.1);
    let seeds: Vec<_> = r
        .val
        .iter()
        .map(|b| network_outputs(&r.model, b, &weights, Supervision::Mono).unwrap())
        .collect();
    let mut gains = Vec::new();
    for lr in [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
        let scores: Vec<f64> = r
            .val
            .iter()
            .zip(&seeds)
            .map(|(b, (d, p))| {
                let out = direct_optimize(b, d, p, lr, 10, &weights, &range, Supervision::Mono).unwrap();
                abs_rel(&out.depth, b)
            })
            .collect();
        gains.push((lr, base - mean(&scores)));
    }
    let (best_lr, best) = gains.iter().cloned().fold((0.0, f64::NEG_INFINITY), |a, g| if g.1 > a.1 { g } else { a });
    let shown: Vec<String> = gains.iter().map(|(lr, g)| format!("{lr}: {g:+.4}")).collect();
    v.check(
        "direct optimization gains under 20% of encoder adaptation (10 steps)",
        encoder_gain > 0.0 && best < 0.2 * encoder_gain,
        format!(
            "best direct gain {best:+.4} at lr {best_lr} vs encoder gain {encoder_gain:+.4} ({:.0}%) | {}",
            100.0 * best / encoder_gain,
            shown.join(", ")
        ),
    );
    v
}

pub fn sequential_stability() -> Verdict {
    let mut v = Verdict::default();
    let r = get();
    let dir = tempfile::tempdir().unwrap();
    let recipe = CorridorRecipe::new(3, 96, 32, 500);
    let seq = corridor(&recipe, dir.path());
    let n = seq.len();
    let baseline: Vec<f64> = seq
        .iter()
        .map(|b| abs_rel(&predict_depth(&r.model, &b.target).unwrap(), b))
        .collect();

    let start = Instant::now();
    let s = adapt_sequential(&r.model, &seq, &AdaptConfig::sequential()).unwrap();
    let seq_secs = start.elapsed().as_secs_f64();
    let sequential = outcome_abs_rel(&s.frames, &seq);

    let start = Instant::now();
    let inst: Vec<_> = adapt_instances(&r.model, &seq, &AdaptConfig::instance(), 1)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    let inst_secs = start.elapsed().as_secs_f64();
    let inst_steps: usize = inst.iter().map(|o| o.gradient_steps).sum();
    let instance = outcome_abs_rel(&inst, &seq);

    let (b, sq, it) = (mean(&baseline), mean(&sequential), mean(&instance));
    v.check(
        "sequential (5 steps) beats baseline",
        sq < b,
        format!("{sq:.4} vs {b:.4} over {n} frames"),
    );
    v.check(
        "sequential within 1.25x of instance (50 steps)",
        sq <= 1.25 * it,
        format!("{sq:.4} vs {it:.4} (ratio {:.3})", sq / it),
    );
    v.check(
        "exactly 10x fewer gradient steps",
        inst_steps == 10 * s.gradient_steps,
        format!("{} vs {inst_steps} ({seq_secs:.0}s vs {inst_secs:.0}s)", s.gradient_steps),
    );
    let (first, last) = (mean(&sequential[..100]), mean(&sequential[n - 100..]));
    let diverged = s.frames.iter().filter(|f| f.diverged).count();
    v.check(
        "no drift: last-100 mean <= first-100 mean",
        last <= first,
        format!("{last:.4} vs {first:.4}, {diverged} diverged frames"),
    );
    v
}

//! Acceptance suite. Runs every criterion (or those named on the command
//! line, by number or name substring) and prints one verdict line each,
//! followed by the individual checks. Entry 0 reports the postconditions
//! of the reference training run the adaptation criteria share.

mod adaptation;
mod common;
mod confinement;
mod gradients;
mod identities;
mod persistence;
mod reference;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::Verdict;

type Criterion = (usize, &'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    (1, "gradient suite", gradients::run),
    (2, "warp identities", identities::warps),
    (3, "loss identities", identities::losses),
    (0, "reference training postconditions", reference::training),
    (4, "encoder vs whole-network ordering", adaptation::table_one_ordering),
    (5, "learning-rate ordering", adaptation::lr_ordering),
    (6, "step-count shape", adaptation::step_shape),
    (7, "direct-optimization null result", adaptation::direct_null_result),
    (8, "sequential stability", adaptation::sequential_stability),
    (9, "mask and stereo confinement", confinement::run),
    (10, "metrics unit fixture", persistence::metrics_fixture),
    (11, "determinism and persistence", persistence::determinism),
];

fn selected(args: &[String], number: usize, name: &str) -> bool {
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    filters.is_empty()
        || filters
            .iter()
            .any(|f| f.parse::<usize>().map_or_else(|_| name.contains(f.as_str()), |n| n == number))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut failed = 0;
    for &(number, name, run) in CRITERIA {
        if !selected(&args, number, name) {
            continue;
        }
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Verdict::aborted(msg)
        });
        let pass = verdict.passed();
        if !pass {
            failed += 1;
        }
        let label = if number == 0 {
            String::from("-")
        } else {
            format!("criterion {number:>2}")
        };
        println!(
            "{label} {name}: {} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        for line in verdict.lines() {
            println!("    {line}");
        }
    }
    if failed > 0 {
        println!("{failed} entries failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 7 and 8 train both models for 100 epochs on five seeds, twice,
//! so a full run takes the better part of an hour on one core. Pass
//! criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 4 5`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::criteria::{self, Outcome};

const NAMES: [&str; 8] = [
    "gradient suite",
    "LSTM hand oracle",
    "KL correctness",
    "metric arithmetic",
    "pipeline laws",
    "overfit sanity",
    "comparative experiment",
    "determinism",
];

fn main() -> ExitCode {
    let picked: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .filter(|n| (1..=8).contains(n))
        .collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);

    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut run = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        if !want(n) {
            return;
        }
        eprintln!("criterion {n}: {} ...", NAMES[n - 1]);
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        print_line(n, &outcome);
        results.push((n, outcome, secs));
    };

    run(1, &mut criteria::gradient_suite);
    run(2, &mut criteria::lstm_oracle);
    run(3, &mut criteria::kl_correctness);
    run(4, &mut criteria::metric_arithmetic);
    run(5, &mut criteria::pipeline_laws);
    run(6, &mut criteria::overfit_sanity);

    if want(7) || want(8) {
        let first = tempfile::tempdir().expect("temp dir");
        let (report, secs) = match criteria::run_full_experiment(first.path()) {
            Ok(v) => v,
            Err(e) => {
                for n in [7, 8].into_iter().filter(|&n| want(n)) {
                    let o = Err(format!("experiment failed: {e}"));
                    print_line(n, &o);
                    results.push((n, o, 0.0));
                }
                return summary(&results);
            }
        };
        run(7, &mut || {
            criteria::check_experiment(&report, first.path(), secs)
        });
        if want(7) {
            if let Ok(text) = std::fs::read_to_string(first.path().join("report.txt")) {
                println!("\n{text}");
            }
        }
        run(8, &mut || {
            let second = tempfile::tempdir().map_err(|e| e.to_string())?;
            criteria::run_full_experiment(second.path())?;
            criteria::compare_trees(first.path(), second.path())
        });
    }
    summary(&results)
}

fn print_line(n: usize, outcome: &Outcome) {
    match outcome {
        Ok(msg) => println!("PASS  criterion {n} ({}): {msg}", NAMES[n - 1]),
        Err(msg) => println!("FAIL  criterion {n} ({}): {msg}", NAMES[n - 1]),
    }
}

fn summary(results: &[(usize, Outcome, f64)]) -> ExitCode {
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!(
        "\nacceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    for (n, _, secs) in results {
        eprintln!("  criterion {n}: {secs:.1} s");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

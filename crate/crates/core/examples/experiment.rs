//! A shortened comparative run: both models, several seeds, full reports.
//!
//! The full-size run is `flowcast experiment` (100 epochs, five seeds).
//!
//! ```text
//! cargo run --release --example experiment [epochs] [seeds]
//! ```

use flowcast::config::RunConfig;
use flowcast::experiment::{run_experiment, Progress};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);

    let mut cfg = RunConfig::default();
    cfg.train.epochs = epochs;
    cfg.experiment.seeds = (0..seeds).collect();
    let cfg = cfg.resolve()?;

    let out = std::env::temp_dir().join("flowcast-experiment-example");
    let report = run_experiment(&cfg, &out, &mut |p| match p {
        Progress::Prepared(s) => println!(
            "seed data {}: {} train / {} test windows",
            s.station_id, s.train_windows, s.test_windows
        ),
        Progress::Epoch { .. } => {}
        Progress::Finished(r) => println!(
            "  {} seed {}: MAPE {:.3}% after {} epochs",
            r.model,
            r.seed,
            r.eval.scaled.mape_percent,
            r.history.epochs.len()
        ),
    })?;
    println!("\n{}", report.render()?);
    println!("artifacts in {}", out.display());
    Ok(())
}

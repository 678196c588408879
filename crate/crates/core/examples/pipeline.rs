//! Ingest a detector export, fill gaps, aggregate, split, scale, and window.
//!
//! ```text
//! cargo run --release --example pipeline
//! ```

use flowcast::data::{
    aggregate_15min, impute_spline, ingest_csv, parse_timestamp, prepare, write_raw_csv, CsvSchema,
    TestLookback,
};
use flowcast::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Any delimited export works; here one is produced from synthetic data
    // with a gap cut out of it.
    let series = generate(&SynthConfig {
        days: 40,
        start: "2019-03-01 00:00:00".into(),
        ..Default::default()
    })?;
    let mut csv = Vec::new();
    write_raw_csv(&mut csv, &[series])?;
    let text = String::from_utf8(csv)?;
    let text: String = text
        .lines()
        .filter(|l| !l.starts_with("2019-03-02 1"))
        .map(|l| format!("{l}\n"))
        .collect();

    let raw = ingest_csv(text.as_bytes(), &CsvSchema::default(), None)?.remove(0);
    println!(
        "ingested {} slots, {} missing (the dropped rows came back as gaps)",
        raw.len(),
        raw.missing_count()
    );

    let filled = impute_spline(&raw)?;
    let clean = aggregate_15min(&filled)?;
    println!(
        "after imputation: {} missing; 15-minute values: {}",
        filled.missing_count(),
        clean.len()
    );

    let boundary = parse_timestamp("2019-04-01").ok_or("bad date")?;
    let prep = prepare(&clean, boundary, 12, TestLookback::TestOnly)?;
    println!(
        "train {} values -> {} windows, test {} values -> {} windows",
        prep.train_series.len(),
        prep.train.len(),
        prep.test_series.len(),
        prep.test.len()
    );
    println!(
        "scaler fitted on train only: lo {:.2}, hi {:.2}",
        prep.scaler.lo(),
        prep.scaler.hi()
    );
    let x = prep.train.window(0);
    println!(
        "first window (scaled): {:.3?} -> {:.3}",
        x,
        prep.train.targets()[0]
    );
    Ok(())
}

//! Build per-station tables and the averaged summary from forecasts.
//!
//! ```text
//! cargo run --release --example metrics_report
//! ```

use flowcast::metrics::{
    average_report, format_table, MetricSpace, MetricsReport, RowLabel, ZeroPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two stations' scaled actuals and forecasts; the first has a night-time
    // zero that MAPE skips.
    let a1 = [0.0, 0.21, 0.48, 0.80, 0.62, 0.35];
    let p1 = [0.02, 0.20, 0.45, 0.83, 0.60, 0.37];
    let a2 = [0.10, 0.30, 0.55, 0.90, 0.70, 0.40];
    let p2 = [0.12, 0.28, 0.57, 0.86, 0.71, 0.43];

    let rows = [
        MetricsReport::compute(
            "716076",
            "VLSTM-E",
            &a1,
            &p1,
            MetricSpace::Scaled,
            ZeroPolicy::default(),
        )?,
        MetricsReport::compute(
            "717060",
            "VLSTM-E",
            &a2,
            &p2,
            MetricSpace::Scaled,
            ZeroPolicy::default(),
        )?,
    ];
    print!("{}", format_table("VLSTM-E", &rows, RowLabel::Station));
    println!(
        "(MAPE skipped {} near-zero actual)\n",
        rows[0].mape_excluded
    );

    let avg = average_report(&rows)?;
    print!(
        "{}",
        format_table("Average Models", &[avg], RowLabel::Model)
    );

    let mut csv = Vec::new();
    flowcast::metrics::write_csv(&mut csv, &rows)?;
    println!("\n{}", String::from_utf8(csv)?);
    Ok(())
}

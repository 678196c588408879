//! Generate a synthetic detector series and summarize its daily shape.
//!
//! ```text
//! cargo run --release --example synth
//! ```

use flowcast::data::{format_timestamp, write_raw_csv};
use flowcast::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        days: 14,
        ..Default::default()
    };
    let series = generate(&cfg)?;
    println!(
        "{}: {} five-minute slots, {} missing ({:.1}%)",
        series.station_id,
        series.len(),
        series.missing_count(),
        100.0 * series.missing_count() as f64 / series.len() as f64
    );

    // Mean flow per hour of day over the weekdays, as a crude bar chart.
    let mut sums = [(0.0, 0usize); 24];
    for o in series.observations() {
        let Some(flow) = o.flow else { continue };
        let weekday = (o.timestamp / 86_400 + 4) % 7; // 1970-01-01 was a Thursday
        if (1..=5).contains(&weekday) {
            let hour = (o.timestamp % 86_400 / 3600) as usize;
            sums[hour].0 += flow;
            sums[hour].1 += 1;
        }
    }
    for (hour, (s, n)) in sums.iter().enumerate() {
        let mean = s / *n as f64;
        println!(
            "{hour:02}:00 {mean:6.1} {}",
            "#".repeat((mean / 3.0) as usize)
        );
    }

    let first = &series.observations()[0];
    println!(
        "\nfirst slot {}; CSV head:",
        format_timestamp(first.timestamp)
    );
    let mut buf = Vec::new();
    write_raw_csv(&mut buf, std::slice::from_ref(&series))?;
    for line in String::from_utf8(buf)?.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}

//! Train the baseline LSTM, forecast the test range, and plot one day.
//!
//! ```text
//! cargo run --release --example forecast_plot
//! ```

use flowcast::config::{ModelKind, RunConfig};
use flowcast::data::parse_timestamp;
use flowcast::experiment::{evaluate, prepare_station};
use flowcast::models::ModelState;
use flowcast::plot::plot_range;
use flowcast::trainer::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    cfg.synth.days = 45;
    cfg.data.boundary = "2019-02-01 00:00:00".into();
    cfg.train.epochs = 15;
    cfg.train.learning_rate = 1e-3;
    cfg.train.batch_size = 64;
    let cfg = cfg.resolve()?;

    let raw = cfg.load_series()?.remove(0);
    let (prep, summary) = prepare_station(&cfg, &raw)?;
    println!(
        "{} train / {} test windows",
        summary.train_windows, summary.test_windows
    );

    let model = ModelState::init(cfg.model_config(ModelKind::Lstm), cfg.seed)?;
    let (model, _) = train(model, &prep.train, &cfg.train, None)?;
    let eval = evaluate(&model, &prep.test, cfg.data.mape_epsilon)?;
    println!(
        "test MAPE {:.2}% (scaled), MAE {:.2} vehicles",
        eval.scaled.mape_percent, eval.original.mae
    );

    let dir = std::env::temp_dir().join("flowcast-plot-example");
    std::fs::create_dir_all(&dir)?;
    let from = parse_timestamp("2019-02-05").ok_or("bad date")?;
    let n = plot_range(
        &eval.forecast,
        from,
        from + 86_400,
        "LSTM, 2019-02-05",
        &dir.join("day"),
    )?;
    println!("{n} points -> {}", dir.join("day.svg").display());
    Ok(())
}

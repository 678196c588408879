//! Train VLSTM-E on a few weeks of synthetic data and watch the loss terms.
//!
//! ```text
//! cargo run --release --example train_vlstm_e [epochs]
//! ```

use flowcast::data::{clean, parse_timestamp, prepare, TestLookback};
use flowcast::metrics::{MetricSpace, MetricsReport, ZeroPolicy};
use flowcast::models::{predict_batch, ModelConfig, ModelState, VlstmEConfig};
use flowcast::synth::{generate, SynthConfig};
use flowcast::trainer::{train_with, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(30);
    let raw = generate(&SynthConfig {
        days: 35,
        ..Default::default()
    })?;
    let prep = prepare(
        &clean(&raw)?,
        parse_timestamp("2019-01-29").ok_or("bad date")?,
        12,
        TestLookback::TestOnly,
    )?;
    println!(
        "{} train windows, {} test windows",
        prep.train.len(),
        prep.test.len()
    );

    let model = ModelState::init(ModelConfig::VlstmE(VlstmEConfig::default()), 0)?;
    // Small data: a larger step and batch than the defaults.
    let cfg = TrainConfig {
        epochs,
        learning_rate: 1e-3,
        batch_size: 64,
        ..Default::default()
    };
    println!("epoch   beta     total      pred     recon        kl");
    let (model, history) = train_with(model, &prep.train, &cfg, None, &mut |e| {
        if e.epoch == 1 || e.epoch % 5 == 0 {
            println!(
                "{:5} {:6.4} {:9.5} {:9.5} {:9.5} {:9.5}",
                e.epoch,
                e.beta,
                e.total,
                e.pred_mse,
                e.recon_mse.unwrap_or(f64::NAN),
                e.kl.unwrap_or(f64::NAN)
            );
        }
    })?;
    println!(
        "trained {} steps in {:.1} s",
        model.step,
        history.total_wall_secs()
    );

    let pred = predict_batch(&model, &prep.test.x, 512)?;
    let r = MetricsReport::compute(
        &raw.station_id,
        model.name(),
        prep.test.targets(),
        &pred,
        MetricSpace::Scaled,
        ZeroPolicy::default(),
    )?;
    println!(
        "test (scaled): MAPE {:.4}%  MAE {:.4}  MSE {:.4}  RMSE {:.4}",
        r.mape_percent, r.mae, r.mse, r.rmse
    );
    Ok(())
}

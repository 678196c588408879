//! Save a trained model, load it back, and forecast in vehicle units.
//!
//! ```text
//! cargo run --release --example checkpoint
//! ```

use flowcast::checkpoint;
use flowcast::data::{clean, window};
use flowcast::models::{predict, LstmConfig, ModelConfig, ModelState};
use flowcast::synth::{generate, SynthConfig};
use flowcast::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = clean(&generate(&SynthConfig {
        days: 14,
        ..Default::default()
    })?)?;
    let data = window(&series, 12)?;
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        batch_size: 64,
        ..Default::default()
    };
    let model = ModelState::init(ModelConfig::Lstm(LstmConfig::default()), 1)?;

    let dir = std::env::temp_dir().join("flowcast-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("lstm.ckpt");
    let (trained, _) = train(model, &data, &cfg, Some(&path))?;
    let bytes = std::fs::metadata(&path)?.len();
    println!(
        "wrote {} ({bytes} bytes, step {})",
        path.display(),
        trained.step
    );

    let loaded = checkpoint::load(&path)?;
    assert_eq!(loaded, trained);
    let last: Vec<f64> = series.values()[series.len() - 12..].to_vec();
    println!("last hour of flow: {:.1?}", &last[8..]);
    println!(
        "next 15 minutes: {:.1} vehicles (trained) / {:.1} (loaded)",
        predict(&trained, &last)?,
        predict(&loaded, &last)?
    );

    // Damage is detected, not silently loaded.
    let mut raw = std::fs::read(&path)?;
    let mid = raw.len() / 2;
    raw[mid] ^= 0x40;
    match checkpoint::from_bytes(&raw) {
        Err(e) => println!("flipped one bit: {e}"),
        Ok(_) => println!("flipped one bit: loaded anyway?"),
    }
    Ok(())
}

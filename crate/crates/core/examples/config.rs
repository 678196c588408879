//! Read a TOML run description, override a field, and print the resolved
//! config that a run would record next to its outputs.
//!
//! ```text
//! cargo run --release --example config
//! ```

use flowcast::config::{ModelKind, RunConfig};

const TOML: &str = r#"
seed = 11
model = "lstm"

[synth]
days = 60
missing_rate = 0.02

[train]
epochs = 20
learning_rate = 5e-4
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::from_toml_str(TOML)?;
    cfg.data.boundary = "2019-02-15 00:00:00".into();
    let cfg = cfg.resolve()?;
    assert_eq!(cfg.model, ModelKind::Lstm);
    assert_eq!(cfg.synth.seed, 11);
    print!("{}", cfg.to_toml());

    for bad in [
        "[train]\nbatch_size = 0",
        "[synth]\nmissing_rate = 1.2",
        "epochz = 3",
    ] {
        let err = RunConfig::from_toml_str(bad)
            .map_err(|e| e.to_string())
            .and_then(|c| c.resolve().map_err(|e| e.to_string()));
        println!("# {:?} -> {}", bad, err.unwrap_err());
    }
    Ok(())
}

//! The `flowcast` command line.
//!
//! Every command resolves a [`RunConfig`] from defaults, the optional
//! `--config` file, and flags (in that order), prints the root seed, and
//! writes the resolved config to `<out>/<command>.config.toml` so the run
//! can be replayed. The output directory comes from `--out`, else
//! `FLOWCAST_OUT`, else the config file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{ModelKind, RunConfig};
use crate::data::{parse_timestamp, write_raw_csv, RawSeries, AGG_STEP};
use crate::error::{Error, Result};
use crate::experiment::{self, prepare_station, Progress, StationSummary};
use crate::metrics::{average_report, format_table, write_csv, RowLabel};
use crate::plot;
use crate::synth;
use crate::trainer::{train_with, EpochRecord};

pub const OUT_ENV: &str = "FLOWCAST_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "flowcast",
    version,
    about = "Short-term traffic-flow forecasting with VLSTM-E and LSTM models"
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags named after config keys; each replaces the config value.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for data generation, init, shuffling, and latent noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only use this station.
    #[arg(long, global = true)]
    pub station: Option<String>,
    /// vlstm-e or lstm.
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Detector CSV to read instead of synthetic data.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// First test timestamp.
    #[arg(long, global = true)]
    pub boundary: Option<String>,
    /// Synthetic days.
    #[arg(long, global = true)]
    pub days: Option<u32>,
    /// Synthetic missing-record rate.
    #[arg(long, global = true)]
    pub missing_rate: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic detector file (`<out>/raw.csv`).
    Synth,
    /// Impute, aggregate, split, and window; print per-station counts.
    Preprocess,
    /// Train the selected model on each station's training range.
    Train,
    /// Report test-set errors of a trained model.
    Evaluate {
        /// Defaults to `<out>/<model>_<station>.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write test-set forecasts (timestamp, actual, predicted).
    Predict {
        /// Defaults to `<out>/<model>_<station>.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw actual vs predicted flow for a date range as SVG plus CSV.
    Plot {
        /// Defaults to `<out>/<model>_<station>_forecast.csv`.
        #[arg(long)]
        forecast: Option<PathBuf>,
        /// Range start; defaults to midnight of the first forecast day.
        #[arg(long)]
        from: Option<String>,
        /// Range end (exclusive); defaults to one day after `from`.
        #[arg(long)]
        to: Option<String>,
    },
    /// Train and evaluate every configured model for every configured seed.
    Experiment,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::Plot { .. } => "plot",
            Command::Experiment => "experiment",
        }
    }
}

impl Overrides {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = &self.station {
            cfg.data.station = Some(s.clone());
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(i) = &self.input {
            cfg.data.input = Some(i.clone());
        }
        if let Some(b) = &self.boundary {
            cfg.data.boundary = b.clone();
        }
        if let Some(d) = self.days {
            cfg.synth.days = d;
        }
        if let Some(r) = self.missing_rate {
            cfg.synth.missing_rate = r;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(l) = self.learning_rate {
            cfg.train.learning_rate = l;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        Ok(cfg.resolve()?)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::from(e).context(out.display().to_string()))?;
    fs::write(
        out.join(format!("{}.config.toml", cli.command.name())),
        cfg.to_toml(),
    )?;
    println!("flowcast {}: root seed {}", cli.command.name(), cfg.seed);

    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &out),
        Command::Preprocess => cmd_preprocess(&cfg, &out),
        Command::Train => cmd_train(&cfg, &out),
        Command::Evaluate { checkpoint } => cmd_evaluate(&cfg, &out, checkpoint.as_deref()),
        Command::Predict { checkpoint } => cmd_predict(&cfg, &out, checkpoint.as_deref()),
        Command::Plot { forecast, from, to } => cmd_plot(
            &cfg,
            &out,
            forecast.as_deref(),
            from.as_deref(),
            to.as_deref(),
        ),
        Command::Experiment => cmd_experiment(&cfg, &out),
    }
}

/// Process entry point. Errors become one `error: <category>: <message>`
/// line on stderr and a non-zero exit status.
pub fn main() -> ExitCode {
    let result = match Cli::try_parse() {
        Ok(cli) => execute(&cli),
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => Err(Error::Usage(e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e
                .to_string()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let series = synth::generate(&cfg.synth)?;
    let path = out.join("raw.csv");
    let mut buf = Vec::new();
    write_raw_csv(&mut buf, std::slice::from_ref(&series))?;
    fs::write(&path, buf)?;
    println!(
        "wrote {} rows for station {} to {} ({} missing, {:.2}%)",
        series.len(),
        series.station_id,
        path.display(),
        series.missing_count(),
        100.0 * series.missing_count() as f64 / series.len() as f64
    );
    Ok(())
}

fn print_summary(s: &StationSummary) {
    println!(
        "station {}: raw {} ({} missing), clean 15-min {}, train {} values / {} windows, test {} values / {} windows",
        s.station_id, s.raw, s.missing, s.clean, s.train_values, s.train_windows, s.test_values, s.test_windows
    );
}

fn cmd_preprocess(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut rows = vec![StationSummary::HEADER.to_string()];
    for raw in cfg.load_series()? {
        let (prep, summary) = prepare_station(cfg, &raw)?;
        print_summary(&summary);
        rows.push(summary.csv_row());
        for (part, series) in [("train", &prep.train_series), ("test", &prep.test_series)] {
            let mut buf = Vec::new();
            series.write_csv(&mut buf)?;
            fs::write(
                out.join(format!("clean_{}_{part}.csv", raw.station_id)),
                buf,
            )?;
        }
    }
    rows.push(String::new());
    fs::write(out.join("summary.csv"), rows.join("\n"))?;
    Ok(())
}

fn model_stem(kind: ModelKind, station: &str) -> String {
    format!("{kind}_{station}")
}

fn print_epoch(r: &EpochRecord, total: usize) {
    let extra = match (r.recon_mse, r.kl) {
        (Some(rc), Some(kl)) => format!(" recon {rc:.3e} kl {kl:.3e}"),
        _ => String::new(),
    };
    eprintln!(
        "epoch {}/{total}: loss {:.4e} pred {:.4e}{extra} ({:.1}s)",
        r.epoch, r.total, r.pred_mse, r.wall_secs
    );
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    for raw in cfg.load_series()? {
        let (prep, summary) = prepare_station(cfg, &raw)?;
        print_summary(&summary);
        let stem = model_stem(cfg.model, &raw.station_id);
        let ckpt = out.join(format!("{stem}.ckpt"));
        let model = crate::models::ModelState::init(cfg.model_config(cfg.model), cfg.seed)?;
        println!(
            "training {} ({} parameters) for {} epochs, {} steps each",
            model.name(),
            model.params.num_scalars(),
            cfg.train.epochs,
            cfg.train.steps_per_epoch(prep.train.len())
        );
        let epochs = cfg.train.epochs;
        let (_, history) = train_with(model, &prep.train, &cfg.train, Some(&ckpt), &mut |r| {
            print_epoch(r, epochs)
        })
        .map_err(|e| Error::from(e).context(format!("station {}", raw.station_id)))?;
        let hist = out.join(format!("{stem}_history.csv"));
        fs::write(&hist, history.to_csv())?;
        if let Some(last) = history.last() {
            println!("final train pred-MSE {:.6e}", last.pred_mse);
        }
        println!(
            "wrote {} and {} ({:.1}s)",
            ckpt.display(),
            hist.display(),
            history.total_wall_secs()
        );
    }
    Ok(())
}

/// Each station's prepared data with the checkpoint to use for it.
fn with_checkpoints(
    cfg: &RunConfig,
    out: &Path,
    explicit: Option<&Path>,
) -> Result<Vec<(RawSeries, PathBuf)>> {
    let series = cfg.load_series()?;
    if explicit.is_some() && series.len() > 1 {
        return Err(Error::Usage(
            "--checkpoint needs a single station; pass --station".into(),
        ));
    }
    Ok(series
        .into_iter()
        .map(|raw| {
            let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| {
                out.join(format!("{}.ckpt", model_stem(cfg.model, &raw.station_id)))
            });
            (raw, path)
        })
        .collect())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let mut scaled = Vec::new();
    let mut original = Vec::new();
    for (raw, path) in with_checkpoints(cfg, out, checkpoint)? {
        let (prep, _) = prepare_station(cfg, &raw)?;
        let eval = experiment::evaluate_checkpoint(&path, &prep.test, cfg.data.mape_epsilon)?;
        scaled.push(eval.scaled);
        original.push(eval.original);
    }
    let model = scaled[0].model.clone();
    let mut text = String::new();
    for (rows, label) in [(&scaled, "scaled flows"), (&original, "vehicles")] {
        text.push_str(&format_table(
            &format!("{model} ({label})"),
            rows,
            RowLabel::Station,
        ));
        if rows.len() > 1 {
            text.push_str(&format_table(
                &format!("Average ({label})"),
                &[average_report(rows)?],
                RowLabel::Model,
            ));
        }
        text.push('\n');
    }
    print!("{text}");
    let stem = cfg.model.as_str();
    fs::write(out.join(format!("{stem}_report.txt")), &text)?;
    let mut all = scaled;
    all.extend(original);
    write_csv(
        fs::File::create(out.join(format!("{stem}_metrics.csv")))?,
        &all,
    )?;
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    for (raw, path) in with_checkpoints(cfg, out, checkpoint)? {
        let (prep, _) = prepare_station(cfg, &raw)?;
        let model = checkpoint::load(&path)
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let eval = experiment::evaluate(&model, &prep.test, cfg.data.mape_epsilon)?;
        let dest = out.join(format!(
            "{}_forecast.csv",
            model_stem(cfg.model, &raw.station_id)
        ));
        eval.forecast.write_csv(fs::File::create(&dest)?)?;
        println!(
            "wrote {} forecasts to {}",
            eval.forecast.len(),
            dest.display()
        );
    }
    Ok(())
}

fn default_station(cfg: &RunConfig) -> Result<String> {
    match (&cfg.data.station, &cfg.data.input) {
        (Some(s), _) => Ok(s.clone()),
        (None, None) => Ok(cfg.synth.station_id.clone()),
        (None, Some(_)) => Err(Error::Usage("pass --station or --forecast".into())),
    }
}

fn parse_time(flag: &str, s: &str) -> Result<i64> {
    parse_timestamp(s).ok_or_else(|| Error::Usage(format!("--{flag}: unparseable timestamp {s:?}")))
}

fn cmd_plot(
    cfg: &RunConfig,
    out: &Path,
    forecast: Option<&Path>,
    from: Option<&str>,
    to: Option<&str>,
) -> Result<()> {
    let station =
        default_station(cfg).or_else(|e| forecast.map(|_| "forecast".to_string()).ok_or(e))?;
    let path = match forecast {
        Some(p) => p.to_path_buf(),
        None => out.join(format!("{}_forecast.csv", model_stem(cfg.model, &station))),
    };
    let fc = plot::read_forecast_path(&path, &station)?;
    let from = match from {
        Some(s) => parse_time("from", s)?,
        None => {
            let first = *fc
                .timestamps
                .first()
                .ok_or_else(|| Error::Usage(format!("{} is empty", path.display())))?;
            first.div_euclid(86_400) * 86_400
        }
    };
    let to = match to {
        Some(s) => parse_time("to", s)?,
        None => from + 86_400,
    };
    if to <= from {
        return Err(Error::Usage("--to must be after --from".into()));
    }
    let day = crate::data::format_timestamp(from);
    let stem = out.join(format!("{}_{station}_plot_{}", cfg.model, &day[..10]));
    let title = format!("Station {station}, {} forecast from {day}", cfg.model);
    let n = plot::plot_range(&fc, from, to, &title, &stem)?;
    println!(
        "plotted {n} points ({} expected at 15-minute spacing) to {}",
        (to - from) / AGG_STEP,
        stem.with_extension("svg").display()
    );
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let epochs = cfg.train.epochs;
    let report = experiment::run_experiment(cfg, out, &mut |p| match p {
        Progress::Prepared(s) => print_summary(s),
        Progress::Epoch {
            model,
            seed,
            record,
        } => {
            if record.epoch % 10 == 0 || record.epoch == epochs {
                eprint!("[{model} seed {seed}] ");
                print_epoch(record, epochs);
            }
        }
        Progress::Finished(r) => println!(
            "{} seed {}: test MAPE {:.4}% ({:.1}s)",
            r.model,
            r.seed,
            r.eval.scaled.mape_percent,
            r.history.total_wall_secs()
        ),
    })?;
    print!("\n{}", report.render()?);
    Ok(())
}

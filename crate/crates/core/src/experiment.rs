//! End-to-end runs: raw series → prepared windows → trained models →
//! per-station and averaged error tables.
//!
//! Everything written to disk is a function of the config alone (no
//! timings, no paths), so two runs with the same seeds produce identical
//! files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::{ModelKind, RunConfig};
use crate::data::{self, format_timestamp, PreparedData, RawSeries, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    average_report, format_table, write_csv, MetricSpace, MetricsReport, RowLabel, ZeroPolicy,
};
use crate::models::{predict_batch, ModelState};
use crate::trainer::{train_with, EpochRecord, TrainHistory};

/// Pipeline counts for one station.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StationSummary {
    pub station_id: String,
    pub raw: usize,
    pub missing: usize,
    /// 15-minute values after imputation and aggregation.
    pub clean: usize,
    pub train_values: usize,
    pub test_values: usize,
    pub train_windows: usize,
    pub test_windows: usize,
}

impl StationSummary {
    pub const HEADER: &'static str =
        "station_id,raw,missing,clean,train_values,test_values,train_windows,test_windows";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.station_id,
            self.raw,
            self.missing,
            self.clean,
            self.train_values,
            self.test_values,
            self.train_windows,
            self.test_windows
        )
    }
}

/// Imputes, aggregates, splits, scales, and windows one station.
pub fn prepare_station(cfg: &RunConfig, raw: &RawSeries) -> Result<(PreparedData, StationSummary)> {
    let ctx = |e: Error| e.context(format!("station {}", raw.station_id));
    let clean = data::clean(raw).map_err(|e| ctx(e.into()))?;
    let boundary = cfg.boundary()?;
    let prepared = data::prepare(&clean, boundary, cfg.lookback(), cfg.data.test_lookback)
        .map_err(|e| ctx(e.into()))?;
    let summary = StationSummary {
        station_id: raw.station_id.clone(),
        raw: raw.len(),
        missing: raw.missing_count(),
        clean: clean.len(),
        train_values: prepared.train_series.len(),
        test_values: prepared.test_series.len(),
        train_windows: prepared.train.len(),
        test_windows: prepared.test.len(),
    };
    Ok((prepared, summary))
}

/// Test-set forecasts in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub station_id: String,
    pub timestamps: Vec<i64>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl Forecast {
    pub const HEADER: &'static str = "timestamp,actual,predicted";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for ((t, a), p) in self
            .timestamps
            .iter()
            .zip(&self.actual)
            .zip(&self.predicted)
        {
            writeln!(w, "{},{a},{p}", format_timestamp(*t))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Metrics of one model on one station's windows, in both spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scaled: MetricsReport,
    pub original: MetricsReport,
    pub forecast: Forecast,
}

/// Fails if the model carries a scaler other than the dataset's, which means
/// it was trained on a different split or station.
pub fn evaluate(
    model: &ModelState,
    test: &WindowedDataset,
    mape_epsilon: f64,
) -> Result<Evaluation> {
    if let Some(s) = model.scaler {
        if s != test.scaler {
            return Err(Error::Usage(format!(
                "model was trained with scaler [{}, {}] but station {} scales to [{}, {}]",
                s.lo(),
                s.hi(),
                test.station_id,
                test.scaler.lo(),
                test.scaler.hi()
            )));
        }
    }
    let pred = predict_batch(model, &test.x, 512)?;
    let actual = test.targets();
    let policy = ZeroPolicy::ExcludeBelow(mape_epsilon);
    let name = model.name();
    let scaled = MetricsReport::compute(
        &test.station_id,
        name,
        actual,
        &pred,
        MetricSpace::Scaled,
        policy,
    )?;
    let s = test.scaler;
    let actual_o: Vec<f64> = actual.iter().map(|&v| s.invert(v)).collect();
    let pred_o: Vec<f64> = pred.iter().map(|&v| s.invert(v)).collect();
    let original = MetricsReport::compute(
        &test.station_id,
        name,
        &actual_o,
        &pred_o,
        MetricSpace::Original,
        policy,
    )?;
    Ok(Evaluation {
        scaled,
        original,
        forecast: Forecast {
            station_id: test.station_id.clone(),
            timestamps: test.target_timestamps.clone(),
            actual: actual_o,
            predicted: pred_o,
        },
    })
}

/// One trained model on one station under one seed.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub model: ModelKind,
    pub eval: Evaluation,
    pub history: TrainHistory,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
}

/// Per-seed mean MAPE of the two models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub vlstm_e_mape: f64,
    pub lstm_mape: f64,
}

impl SeedComparison {
    pub fn vlstm_e_not_worse(&self) -> bool {
        self.vlstm_e_mape <= self.lstm_mape
    }
}

impl ExperimentReport {
    fn reports(&self, model: ModelKind, space: MetricSpace) -> Vec<MetricsReport> {
        self.runs
            .iter()
            .filter(|r| r.model == model)
            .map(|r| {
                let mut rep = match space {
                    MetricSpace::Scaled => r.eval.scaled.clone(),
                    MetricSpace::Original => r.eval.original.clone(),
                };
                rep.station_id = format!("{} [seed {}]", rep.station_id, r.seed);
                rep
            })
            .collect()
    }

    fn models(&self) -> Vec<ModelKind> {
        ModelKind::ALL
            .into_iter()
            .filter(|k| self.runs.iter().any(|r| r.model == *k))
            .collect()
    }

    /// One row per model, averaged over every station and seed.
    pub fn averages(&self, space: MetricSpace) -> Result<Vec<MetricsReport>> {
        self.models()
            .into_iter()
            .map(|k| Ok(average_report(&self.reports(k, space))?))
            .collect()
    }

    /// Scaled-space MAPE per seed, when both models ran.
    pub fn seed_comparisons(&self) -> Vec<SeedComparison> {
        let mut seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        seeds.dedup();
        let mean = |seed, kind| {
            let v: Vec<f64> = self
                .runs
                .iter()
                .filter(|r| r.seed == seed && r.model == kind)
                .map(|r| r.eval.scaled.mape_percent)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        seeds
            .into_iter()
            .filter_map(|seed| {
                Some(SeedComparison {
                    seed,
                    vlstm_e_mape: mean(seed, ModelKind::VlstmE)?,
                    lstm_mape: mean(seed, ModelKind::Lstm)?,
                })
            })
            .collect()
    }

    /// Text report: per-model station tables, then the averages, in both
    /// spaces, then the per-seed comparison.
    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for (space, label) in [
            (MetricSpace::Scaled, "scaled flows"),
            (MetricSpace::Original, "vehicles"),
        ] {
            let _ = writeln!(out, "== Per-station results ({label}) ==\n");
            for k in self.models() {
                let rows = self.reports(k, space);
                out.push_str(&format_table(
                    rows[0].model.as_str(),
                    &rows,
                    RowLabel::Station,
                ));
                out.push('\n');
            }
            let _ = writeln!(out, "== Average performance ({label}) ==\n");
            out.push_str(&format_table(
                "Average Models",
                &self.averages(space)?,
                RowLabel::Model,
            ));
            out.push('\n');
        }
        let cmp = self.seed_comparisons();
        if !cmp.is_empty() {
            let _ = writeln!(out, "== MAPE [%] per seed (scaled) ==\n");
            let _ = writeln!(out, "{:>6}  {:>10}  {:>10}", "Seed", "VLSTM-E", "LSTM");
            for c in &cmp {
                let _ = writeln!(
                    out,
                    "{:>6}  {:>10.4}  {:>10.4}",
                    c.seed, c.vlstm_e_mape, c.lstm_mape
                );
            }
            let wins = cmp.iter().filter(|c| c.vlstm_e_not_worse()).count();
            let _ = writeln!(
                out,
                "\nVLSTM-E MAPE <= LSTM MAPE in {wins} of {} seeds",
                cmp.len()
            );
        }
        Ok(out)
    }

    /// Every run's metrics (both spaces) followed by the averages.
    pub fn write_metrics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows = Vec::new();
        for space in [MetricSpace::Scaled, MetricSpace::Original] {
            for k in self.models() {
                rows.extend(self.reports(k, space));
            }
            rows.extend(self.averages(space)?);
        }
        write_csv(w, &rows)?;
        Ok(())
    }
}

/// File stem for one run's artifacts.
pub fn run_stem(model: ModelKind, seed: u64, station: &str) -> String {
    format!("{model}_seed{seed}_{station}")
}

/// Progress events for callers that want to print them.
pub enum Progress<'a> {
    Prepared(&'a StationSummary),
    Epoch {
        model: ModelKind,
        seed: u64,
        record: &'a EpochRecord,
    },
    Finished(&'a RunResult),
}

/// Trains and evaluates every configured model for every seed.
///
/// Each seed is the root seed of its own run: with synthetic input it also
/// generates that run's data. Artifacts go to `out/runs/`, reports to
/// `out/report.txt` and `out/metrics.csv`.
pub fn run_experiment(
    cfg: &RunConfig,
    out: &Path,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<ExperimentReport> {
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut report = ExperimentReport::default();
    for &seed in &cfg.experiment.seeds {
        let mut seeded = cfg.clone();
        seeded.set_seed(seed);
        let seeded = seeded.resolve()?;
        for raw in seeded.load_series()? {
            let (prep, summary) = prepare_station(&seeded, &raw)?;
            progress(Progress::Prepared(&summary));
            for &kind in &cfg.experiment.models {
                let stem = run_stem(kind, seed, &raw.station_id);
                let result =
                    train_and_evaluate(&seeded, kind, &prep, &runs_dir, &stem, &mut |record| {
                        progress(Progress::Epoch {
                            model: kind,
                            seed,
                            record,
                        })
                    })?;
                progress(Progress::Finished(&result));
                report.runs.push(result);
            }
        }
    }
    fs::write(out.join("report.txt"), report.render()?)?;
    report.write_metrics_csv(fs::File::create(out.join("metrics.csv"))?)?;
    Ok(report)
}

/// Paths of one run's artifacts.
pub fn artifact_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.ckpt")),
        dir.join(format!("{stem}_history.csv")),
        dir.join(format!("{stem}_forecast.csv")),
    )
}

/// Trains `kind` on the prepared training windows, writes the checkpoint,
/// history, and test forecast under `dir`, and evaluates on the test set.
pub fn train_and_evaluate(
    cfg: &RunConfig,
    kind: ModelKind,
    prep: &PreparedData,
    dir: &Path,
    stem: &str,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<RunResult> {
    let (ckpt, hist, fc) = artifact_paths(dir, stem);
    let model = ModelState::init(cfg.model_config(kind), cfg.seed)?;
    let (model, history) = train_with(model, &prep.train, &cfg.train, Some(&ckpt), on_epoch)?;
    fs::write(&hist, history.to_csv())?;
    let eval = evaluate(&model, &prep.test, cfg.data.mape_epsilon)?;
    eval.forecast.write_csv(fs::File::create(&fc)?)?;
    Ok(RunResult {
        seed: cfg.seed,
        model: kind,
        eval,
        history,
    })
}

/// Loads a checkpoint and reports its metrics on `test`.
pub fn evaluate_checkpoint(
    path: &Path,
    test: &WindowedDataset,
    mape_epsilon: f64,
) -> Result<Evaluation> {
    let model =
        checkpoint::load(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    evaluate(&model, test, mape_epsilon)
}

//! One check per acceptance criterion. Each returns a one-line summary on
//! success and a description of the first violation on failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use flowcast::config::RunConfig;
use flowcast::data::{
    clean, impute_spline, prepare, window, CleanSeries, MinMaxScaler, NaturalCubicSpline,
    Observation, RawSeries, TestLookback,
};
use flowcast::experiment::{run_experiment, ExperimentReport};
use flowcast::metrics::{
    average_report, mae, mape, mse, residuals, rmse, MetricSpace, MetricsReport, ZeroPolicy,
};
use flowcast::models::{predict_batch, ModelConfig, ModelState, VlstmEConfig};
use flowcast::nn::{lstm_step, CellMode, LstmParams};
use flowcast::rng::FlowRng;
use flowcast::synth::{generate, SynthConfig};
use flowcast::trainer::{train, TrainConfig};
use flowcast::variational::{kl_to_standard_normal, GaussianLatent};
use flowcast::{GradTape, Tensor};

use super::grad::{cases, worst_over_seeds};
use super::{SEEDS, TOL};

pub type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------- gradients

pub fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let all = cases();
    let mut worst = 0.0f64;
    for case in &all {
        let (seed, r) = worst_over_seeds(case);
        ensure(r.passes(TOL), || {
            format!("{} seed {seed}: {r:?}", case.name)
        })?;
        worst = worst.max(r.max_rel_error);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} cases x {SEEDS} seeds, worst relative error {worst:.2e}, {secs:.1} s",
        all.len()
    ))
}

// ---------------------------------------------------------------- lstm oracle

/// `gate[r][j] = Σ_k x[r][k]·U[k][j] + Σ_k h[r][k]·W[k][j]`, written out
/// with plain loops over row-major slices.
fn affine(x: &[f64], u: &Tensor, h: &[f64], w: &Tensor, j: usize) -> f64 {
    let hidden = w.shape()[1];
    let mut s = 0.0;
    for (k, xv) in x.iter().enumerate() {
        s += xv * u.data()[k * hidden + j];
    }
    for (k, hv) in h.iter().enumerate() {
        s += hv * w.data()[k * hidden + j];
    }
    s
}

/// Scalar evaluation of one LSTM step for a single row.
pub fn scalar_lstm(
    p: &LstmParams,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    squashed: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut h_out = vec![0.0; n];
    let mut c_out = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(affine(x, &p.u_i, h, &p.w_i, j));
        let f = sigmoid(affine(x, &p.u_f, h, &p.w_f, j));
        let o = sigmoid(affine(x, &p.u_o, h, &p.w_o, j));
        let g = affine(x, &p.u_g, h, &p.w_g, j).tanh();
        let pre = f * c[j] + i * g;
        c_out[j] = if squashed { sigmoid(pre) } else { pre };
        h_out[j] = o * c_out[j].tanh();
    }
    (h_out, c_out)
}

fn tape_lstm(
    p: &LstmParams,
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    mode: CellMode,
) -> (Tensor, Tensor) {
    let mut tape = GradTape::new();
    let pv = p.bind(&mut tape).unwrap();
    let (x, h, c) = (
        tape.constant(x.clone()),
        tape.constant(h.clone()),
        tape.constant(c.clone()),
    );
    let (h, c) = lstm_step(&mut tape, x, h, c, &pv, mode).unwrap();
    (tape.value(h).clone(), tape.value(c).clone())
}

pub fn lstm_oracle() -> Outcome {
    // Zero weights: every sigmoid gate is 1/2 and the candidate is 0.
    let zero = LstmParams::zeros(1, 1);
    let x = Tensor::filled(&[1, 1], 0.3);
    let h0 = Tensor::zeros(&[1, 1]);
    let c1 = Tensor::filled(&[1, 1], 1.0);
    let (h_can, _) = tape_lstm(&zero, &x, &h0, &c1, CellMode::Canonical);
    let h_can = h_can.data()[0];
    ensure((h_can - 0.2311).abs() < 5e-5, || {
        format!("canonical h = {h_can}, expected 0.2311")
    })?;
    ensure((h_can - 0.5 * 0.5f64.tanh()).abs() < 1e-12, || {
        format!("canonical h = {h_can}")
    })?;
    let (h_sq, c_sq) = tape_lstm(&zero, &x, &h0, &c1, CellMode::Squashed);
    let (h_sq, c_sq) = (h_sq.data()[0], c_sq.data()[0]);
    ensure((c_sq - sigmoid(0.5)).abs() < 1e-12, || {
        format!("squashed c = {c_sq}")
    })?;
    ensure((h_sq - 0.5 * sigmoid(0.5).tanh()).abs() < 1e-12, || {
        format!("squashed h = {h_sq}")
    })?;

    // Random weights and states, both modes, against the scalar evaluation.
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = FlowRng::new(700 + seed);
        let (batch, input, hidden) = (3, 2, 4);
        let p = LstmParams::init(input, hidden, &mut rng).unwrap();
        let x = super::rand_tensor(&mut rng, &[batch, input], -1.0, 1.0);
        let h = super::rand_tensor(&mut rng, &[batch, hidden], -1.0, 1.0);
        let c = super::rand_tensor(&mut rng, &[batch, hidden], -2.0, 2.0);
        for mode in [CellMode::Canonical, CellMode::Squashed] {
            let (ht, ct) = tape_lstm(&p, &x, &h, &c, mode);
            for r in 0..batch {
                let row = |t: &Tensor, w: usize| t.data()[r * w..(r + 1) * w].to_vec();
                let (hs, cs) = scalar_lstm(
                    &p,
                    &row(&x, input),
                    &row(&h, hidden),
                    &row(&c, hidden),
                    mode == CellMode::Squashed,
                );
                for j in 0..hidden {
                    worst = worst
                        .max((ht.data()[r * hidden + j] - hs[j]).abs())
                        .max((ct.data()[r * hidden + j] - cs[j]).abs());
                }
            }
        }
    }
    ensure(worst < 1e-12, || {
        format!("tape and scalar evaluation differ by {worst:e}")
    })?;
    Ok(format!(
        "h = {h_can:.4} (canonical), h = {h_sq:.4} (squashed); random cells agree to {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- KL

pub fn closed_form_kl(mu: &[f64], log_var: &[f64]) -> f64 {
    let mut tape = GradTape::new();
    let d = mu.len();
    let m = tape.constant(Tensor::new(vec![1, d], mu.to_vec()).unwrap());
    let l = tape.constant(Tensor::new(vec![1, d], log_var.to_vec()).unwrap());
    let lat = GaussianLatent::new(&tape, m, l).unwrap();
    let kl = kl_to_standard_normal(&mut tape, &lat).unwrap();
    tape.value(kl).data()[0]
}

/// `E_q[log q(z) − log p(z)]` by sampling `z ~ q`.
pub fn monte_carlo_kl(mu: &[f64], log_var: &[f64], samples: usize, rng: &mut FlowRng) -> f64 {
    let mut total = 0.0;
    for _ in 0..samples {
        for (m, lv) in mu.iter().zip(log_var) {
            let sd = (0.5 * lv).exp();
            let eps = rng.normal();
            let z = m + sd * eps;
            // log q − log p; the 2π terms cancel.
            total += -0.5 * lv - 0.5 * eps * eps + 0.5 * z * z;
        }
    }
    total / samples as f64
}

pub fn kl_correctness() -> Outcome {
    let at_origin = closed_form_kl(&[0.0], &[0.0]);
    ensure(at_origin == 0.0, || format!("KL(0, 0) = {at_origin}"))?;
    let shifted = closed_form_kl(&[1.0], &[0.0]);
    ensure((shifted - 0.5).abs() < 1e-15, || {
        format!("KL(1, 0) = {shifted}")
    })?;

    let mut rng = FlowRng::new(31);
    let mut worst = 0.0f64;
    for k in 0..10 {
        let dim = 4;
        let mu: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let log_var: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let exact = closed_form_kl(&mu, &log_var);
        let est = monte_carlo_kl(&mu, &log_var, 1_000_000, &mut rng);
        let rel = (est - exact).abs() / exact;
        ensure(rel < 0.01, || {
            format!("latent {k}: closed {exact}, sampled {est}")
        })?;
        worst = worst.max(rel);
    }
    Ok(format!(
        "KL(0,0) = 0, KL(1,0) = 0.5; 10 latents vs 10^6 samples, worst relative gap {:.3}%",
        worst * 100.0
    ))
}

// ---------------------------------------------------------------- metrics

fn report(station: &str, mape: f64, mae: f64, mse: f64, rmse: f64) -> MetricsReport {
    MetricsReport {
        station_id: station.into(),
        model: "VLSTM-E".into(),
        mape_percent: mape,
        mae,
        mse,
        rmse,
        n: 1,
        mape_excluded: 0,
        space: MetricSpace::Scaled,
    }
}

/// Published per-station VLSTM-E rows.
pub fn published_station_rows() -> [MetricsReport; 2] {
    [
        report("716076", 9.5954, 0.0312, 0.0018, 0.0422),
        report("717060", 8.8625, 0.0276, 0.0015, 0.0381),
    ]
}

pub fn metric_arithmetic() -> Outcome {
    let e = residuals(&[100.0], &[90.0]).unwrap();
    ensure(e == [10.0], || format!("residual {e:?}"))?;
    let e = [3.0, -4.0];
    let (m, r, a) = (mse(&e).unwrap(), rmse(&e).unwrap(), mae(&e).unwrap());
    ensure(m == 12.5 && r == 12.5f64.sqrt() && a == 3.5, || {
        format!("mse {m} rmse {r} mae {a}")
    })?;
    let p = mape(&[100.0, 200.0], &[90.0, 220.0], ZeroPolicy::default()).unwrap();
    ensure((p.percent - 10.0).abs() < 1e-12, || {
        format!("mape {}", p.percent)
    })?;
    let p = mape(&[0.0, 100.0], &[5.0, 90.0], ZeroPolicy::default()).unwrap();
    ensure(
        p.used == 1 && p.excluded == 1 && (p.percent - 10.0).abs() < 1e-12,
        || format!("{p:?}"),
    )?;

    let mut rng = FlowRng::new(4);
    for k in 0..1000 {
        let n = 1 + (rng.unit() * 50.0) as usize;
        let e: Vec<f64> = (0..n).map(|_| rng.uniform(-10.0, 10.0)).collect();
        let (a, r) = (mae(&e).unwrap(), rmse(&e).unwrap());
        ensure(a <= r * (1.0 + 1e-15), || {
            format!("vector {k}: mae {a} > rmse {r}")
        })?;
    }

    let avg = average_report(&published_station_rows()).unwrap();
    let cells = [avg.mape_percent, avg.mae, avg.mse, avg.rmse].map(|v| format!("{v:.4}"));
    ensure(cells == ["9.2290", "0.0294", "0.0016", "0.0402"], || {
        format!("average row {cells:?}")
    })?;
    Ok(format!(
        "hand values exact; mae <= rmse on 1000 vectors; average row {}",
        cells.join(" ")
    ))
}

// ---------------------------------------------------------------- pipeline

fn obs(start: i64, flows: &[Option<f64>]) -> Vec<Observation> {
    flows
        .iter()
        .enumerate()
        .map(|(i, &flow)| Observation {
            timestamp: start + 300 * i as i64,
            flow,
        })
        .collect()
}

pub fn pipeline_laws() -> Outcome {
    let t = Instant::now();
    let mut rng = FlowRng::new(5);

    // Window count law, including the 90-day training range.
    for len in [13usize, 14, 100, 8640] {
        let values: Vec<f64> = (0..len).map(|i| (i % 96) as f64 + rng.unit()).collect();
        let c = CleanSeries::new("s", 0, values).unwrap();
        let w = window(&c, 12).unwrap();
        ensure(w.len() == len - 12, || {
            format!("length {len} gave {} windows", w.len())
        })?;
    }

    // Scaler roundtrip.
    let xs: Vec<f64> = (0..1000).map(|_| rng.uniform(0.0, 400.0)).collect();
    let s = MinMaxScaler::fit(&xs).unwrap();
    let worst = xs
        .iter()
        .map(|&x| (s.invert(s.apply(x)) - x).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-12, || {
        format!("scaler roundtrip error {worst:e}")
    })?;

    // Spline: knots kept, complete series unchanged.
    let start = 1_546_300_800;
    let mut flows: Vec<Option<f64>> = (0..600).map(|_| Some(rng.uniform(0.0, 120.0))).collect();
    let complete = RawSeries::new("s", obs(start, &flows)).unwrap();
    ensure(impute_spline(&complete).unwrap() == complete, || {
        "imputation changed a complete series".into()
    })?;
    for (i, f) in flows.iter_mut().enumerate() {
        if i > 0 && i < 599 && rng.unit() < 0.2 {
            *f = None;
        }
    }
    let gappy = RawSeries::new("s", obs(start, &flows)).unwrap();
    let filled = impute_spline(&gappy).unwrap();
    let mut knot_err = 0.0f64;
    for (a, b) in gappy.observations().iter().zip(filled.observations()) {
        ensure(b.flow.is_some(), || "slot left missing".into())?;
        if let Some(v) = a.flow {
            knot_err = knot_err.max((v - b.flow.unwrap()).abs());
        }
    }
    // The fitted curve itself, on irregular knots.
    let mut x = 0.0;
    let kx: Vec<f64> = (0..300)
        .map(|_| {
            x += rng.uniform(0.5, 3.0);
            x
        })
        .collect();
    let ky: Vec<f64> = kx.iter().map(|_| rng.uniform(0.0, 150.0)).collect();
    let spline = NaturalCubicSpline::fit(&kx, &ky).unwrap();
    for (x, y) in kx.iter().zip(&ky) {
        knot_err = knot_err.max((spline.eval(*x) - y).abs());
    }
    ensure(knot_err <= 1e-9, || {
        format!("spline misses a knot by {knot_err:e}")
    })?;

    // No leakage: any test value may change without moving the scaler.
    let raw = generate(&SynthConfig::default()).unwrap();
    let c = clean(&raw).unwrap();
    let boundary = flowcast::data::parse_timestamp("2019-04-01 00:00:00").unwrap();
    let base = prepare(&c, boundary, 12, TestLookback::TestOnly).unwrap();
    ensure(base.train.len() == 8628, || {
        format!("{} training windows", base.train.len())
    })?;
    let cut = base.train_series.len();
    for k in 0..50 {
        let mut v = c.values().to_vec();
        let i = cut + (rng.unit() * (v.len() - cut) as f64) as usize;
        v[i] = if k % 2 == 0 { 1e6 } else { 0.0 };
        let perturbed = CleanSeries::new(c.station_id.clone(), c.start(), v).unwrap();
        let p = prepare(&perturbed, boundary, 12, TestLookback::TestOnly).unwrap();
        ensure(p.scaler == base.scaler, || {
            format!("changing test value {i} moved the scaler")
        })?;
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(format!(
        "8640 -> 8628 windows; roundtrip {worst:.1e}; knot residual {knot_err:.1e}; scaler unmoved by 50 test edits; {secs:.2} s"
    ))
}

// ---------------------------------------------------------------- overfit

/// 200 windows of a noiseless, complete synthetic series.
pub fn overfit_fixture() -> flowcast::data::WindowedDataset {
    let cfg = SynthConfig {
        days: 3,
        noise_std: 0.0,
        missing_rate: 0.0,
        ..Default::default()
    };
    let c = clean(&generate(&cfg).unwrap()).unwrap();
    let c = CleanSeries::new(c.station_id.clone(), c.start(), c.values()[..212].to_vec()).unwrap();
    window(&c, 12).unwrap()
}

pub fn overfit_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        batch_size: 32,
        epochs,
        seed,
        ..Default::default()
    }
}

pub fn overfit_mse(seed: u64) -> (f64, String) {
    let data = overfit_fixture();
    let model = ModelState::init(ModelConfig::VlstmE(VlstmEConfig::default()), seed).unwrap();
    let (model, history) = train(model, &data, &overfit_config(seed, 500), None).unwrap();
    let pred = predict_batch(&model, &data.x, 256).unwrap();
    let mse = pred
        .iter()
        .zip(data.targets())
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    (mse, history.to_csv())
}

pub fn overfit_sanity() -> Outcome {
    let t = Instant::now();
    ensure(overfit_fixture().len() == 200, || {
        "fixture is not 200 windows".into()
    })?;
    let (mse, hist) = overfit_mse(0);
    ensure(mse < 1e-3, || {
        format!("train pred-MSE {mse:.3e} after 500 epochs")
    })?;
    let (again, hist2) = overfit_mse(0);
    ensure(again.to_bits() == mse.to_bits() && hist == hist2, || {
        "rerun with the same seed differs".into()
    })?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "train pred-MSE {mse:.2e} (scaled) after 500 epochs; seeded rerun identical; {secs:.0} s"
    ))
}

// ---------------------------------------------------------------- experiment

pub fn experiment_config() -> RunConfig {
    RunConfig::default().resolve().expect("defaults are valid")
}

pub fn run_full_experiment(out: &Path) -> Result<(ExperimentReport, f64), String> {
    let t = Instant::now();
    let report =
        run_experiment(&experiment_config(), out, &mut |_| {}).map_err(|e| e.to_string())?;
    Ok((report, t.elapsed().as_secs_f64()))
}

pub fn check_experiment(report: &ExperimentReport, out: &Path, secs: f64) -> Outcome {
    let cfg = experiment_config();
    let expected = cfg.experiment.seeds.len() * cfg.experiment.models.len();
    ensure(report.runs.len() == expected, || {
        format!("{} of {expected} runs", report.runs.len())
    })?;
    for r in &report.runs {
        ensure(r.history.epochs.len() == cfg.train.epochs, || {
            format!(
                "{} seed {}: {} epochs",
                r.model,
                r.seed,
                r.history.epochs.len()
            )
        })?;
        for m in [&r.eval.scaled, &r.eval.original] {
            let vals = [m.mape_percent, m.mae, m.mse, m.rmse];
            ensure(vals.iter().all(|v| v.is_finite()), || {
                format!("{} seed {}: {vals:?}", r.model, r.seed)
            })?;
        }
    }
    let text = std::fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?;
    for needle in [
        "Average Models",
        "Station ID",
        "MAPE [%]",
        "MAE",
        "MSE",
        "RMSE",
        "VLSTM-E",
        "LSTM",
    ] {
        ensure(text.contains(needle), || format!("report lacks {needle:?}"))?;
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).map_err(|e| e.to_string())?;
    let rows = csv.lines().count() - 1;
    // Every run and each model's average, in two spaces.
    let want = 2 * (expected + cfg.experiment.models.len());
    ensure(rows == want, || {
        format!("metrics.csv has {rows} rows, expected {want}")
    })?;
    ensure(
        csv.lines().next() == Some(flowcast::metrics::CSV_HEADER),
        || "metrics.csv header".into(),
    )?;

    let cmp = report.seed_comparisons();
    let wins = cmp.iter().filter(|c| c.vlstm_e_not_worse()).count();
    let avg = report
        .averages(MetricSpace::Scaled)
        .map_err(|e| e.to_string())?;
    let means: Vec<String> = avg
        .iter()
        .map(|a| format!("{} {:.4}", a.model, a.mape_percent))
        .collect();
    ensure(secs < 1800.0, || format!("took {:.1} min", secs / 60.0))?;
    Ok(format!(
        "{expected} runs, metrics finite, reports well-formed; mean MAPE {}; VLSTM-E <= LSTM in {wins} of {} seeds (expected >= 3, not gated); {:.1} min",
        means.join(", "),
        cmp.len(),
        secs / 60.0
    ))
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

/// Every file under `a` exists under `b` with identical bytes, and vice versa.
pub fn compare_trees(a: &Path, b: &Path) -> Outcome {
    let (ta, tb) = (read_tree(a)?, read_tree(b)?);
    let names_a: Vec<&String> = ta.keys().collect();
    let names_b: Vec<&String> = tb.keys().collect();
    ensure(names_a == names_b, || {
        format!("file sets differ: {names_a:?} vs {names_b:?}")
    })?;
    for (name, bytes) in &ta {
        ensure(tb[name] == *bytes, || format!("{name} differs"))?;
    }
    let count = |suffix: &str| ta.keys().filter(|k| k.ends_with(suffix)).count();
    ensure(count(".ckpt") > 0 && count("_history.csv") > 0, || {
        "no checkpoints or histories".into()
    })?;
    Ok(format!(
        "{} files byte-identical ({} checkpoints, {} histories, reports)",
        ta.len(),
        count(".ckpt"),
        count("_history.csv")
    ))
}

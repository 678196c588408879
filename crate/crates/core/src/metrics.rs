//! Forecast error measures and per-station report tables.
//!
//! With residuals `e_i = f_i − f̂_i` over `n` test points:
//!
//! ```text
//! MSE  = Σ e_i² / n        RMSE = √MSE        MAE = Σ |e_i| / n
//! MAPE = 100 / n · Σ |e_i / f_i|
//! ```

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

/// `f − f̂`, elementwise.
pub fn residuals(actual: &[f64], predicted: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(actual.iter().zip(predicted).map(|(f, p)| f - p).collect())
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> Result<f64, MetricsError> {
    let n = xs.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(xs.sum::<f64>() / n as f64)
}

pub fn mse(e: &[f64]) -> Result<f64, MetricsError> {
    mean(e.iter().map(|x| x * x))
}

pub fn rmse(e: &[f64]) -> Result<f64, MetricsError> {
    mse(e).map(f64::sqrt)
}

pub fn mae(e: &[f64]) -> Result<f64, MetricsError> {
    mean(e.iter().map(|x| x.abs()))
}

/// What MAPE does with actual values at or near zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Skip points with `|f_i| <` the threshold and count them.
    ExcludeBelow(f64),
    /// Fail on any exact zero.
    Error,
}

impl Default for ZeroPolicy {
    fn default() -> Self {
        ZeroPolicy::ExcludeBelow(1e-6)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mape {
    pub percent: f64,
    /// Points that entered the mean.
    pub used: usize,
    /// Points skipped by the zero policy.
    pub excluded: usize,
}

pub fn mape(actual: &[f64], predicted: &[f64], policy: ZeroPolicy) -> Result<Mape, MetricsError> {
    let e = residuals(actual, predicted)?;
    let mut sum = 0.0;
    let mut used = 0;
    for (i, (&f, &r)) in actual.iter().zip(&e).enumerate() {
        match policy {
            ZeroPolicy::ExcludeBelow(eps) if f.abs() < eps => continue,
            ZeroPolicy::Error if f == 0.0 => return Err(MetricsError::ZeroActual(i)),
            _ => {}
        }
        sum += (r / f).abs();
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::AllExcluded);
    }
    Ok(Mape {
        percent: 100.0 * sum / used as f64,
        used,
        excluded: actual.len() - used,
    })
}

/// Units the metrics were computed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    /// Min-max scaled flows.
    Scaled,
    /// Vehicles per interval.
    Original,
}

impl MetricSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricSpace::Scaled => "scaled",
            MetricSpace::Original => "original",
        }
    }
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub station_id: String,
    pub model: String,
    pub mape_percent: f64,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Test points.
    pub n: usize,
    /// Points left out of MAPE by the zero policy.
    pub mape_excluded: usize,
    pub space: MetricSpace,
}

impl MetricsReport {
    pub fn compute(
        station_id: &str,
        model: &str,
        actual: &[f64],
        predicted: &[f64],
        space: MetricSpace,
        policy: ZeroPolicy,
    ) -> Result<Self, MetricsError> {
        let e = residuals(actual, predicted)?;
        let m = mape(actual, predicted, policy)?;
        let mse = mse(&e)?;
        Ok(Self {
            station_id: station_id.to_string(),
            model: model.to_string(),
            mape_percent: m.percent,
            mae: mae(&e)?,
            mse,
            rmse: mse.sqrt(),
            n: e.len(),
            mape_excluded: m.excluded,
            space,
        })
    }
}

/// Station label used for averaged rows.
pub const AVERAGE_LABEL: &str = "average";

/// Arithmetic mean of each metric across stations of one model. RMSE is
/// averaged like the others rather than recomputed from the mean MSE;
/// counts are summed.
pub fn average_report(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if let Some(r) = reports.iter().find(|r| r.model != first.model) {
        return Err(MetricsError::MixedModels(
            first.model.clone(),
            r.model.clone(),
        ));
    }
    if reports.iter().any(|r| r.space != first.space) {
        return Err(MetricsError::MixedSpaces);
    }
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let k = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        station_id: AVERAGE_LABEL.into(),
        model: first.model.clone(),
        mape_percent: avg(|r| r.mape_percent),
        mae: avg(|r| r.mae),
        mse: avg(|r| r.mse),
        rmse: avg(|r| r.rmse),
        n: reports.iter().map(|r| r.n).sum(),
        mape_excluded: reports.iter().map(|r| r.mape_excluded).sum(),
        space: first.space,
    })
}

/// Which report field labels the rows of a table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowLabel {
    Station,
    Model,
}

/// Aligned text table with metrics at four decimals:
///
/// ```text
/// VLSTM-E
/// Station ID   MAPE [%]     MAE     MSE    RMSE
/// 716076         9.5954  0.0312  0.0018  0.0422
/// ```
pub fn format_table(title: &str, rows: &[MetricsReport], label: RowLabel) -> String {
    let head = match label {
        RowLabel::Station => "Station ID",
        RowLabel::Model => "Model",
    };
    let names: Vec<&str> = rows
        .iter()
        .map(|r| match label {
            RowLabel::Station => r.station_id.as_str(),
            RowLabel::Model => r.model.as_str(),
        })
        .collect();
    let w = names
        .iter()
        .map(|n| n.len())
        .chain([head.len()])
        .max()
        .unwrap_or(0);
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| [r.mape_percent, r.mae, r.mse, r.rmse].map(|v| format!("{v:.4}")))
        .collect();
    let cw = cells
        .iter()
        .flatten()
        .map(String::len)
        .chain([8])
        .max()
        .unwrap_or(8);

    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "{head:<w$}  {:>cw$}  {:>cw$}  {:>cw$}  {:>cw$}",
        "MAPE [%]", "MAE", "MSE", "RMSE"
    );
    for (name, c) in names.iter().zip(&cells) {
        let _ = writeln!(
            out,
            "{name:<w$}  {:>cw$}  {:>cw$}  {:>cw$}  {:>cw$}",
            c[0], c[1], c[2], c[3]
        );
    }
    out
}

pub const CSV_HEADER: &str = "station_id,model,space,n,mape_excluded,mape_percent,mae,mse,rmse";

/// Machine-readable rows at full precision.
pub fn write_csv<W: Write>(mut w: W, rows: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.station_id,
            r.model,
            r.space.as_str(),
            r.n,
            r.mape_excluded,
            r.mape_percent,
            r.mae,
            r.mse,
            r.rmse
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(station: &str, mape: f64, mae: f64, mse: f64, rmse: f64) -> MetricsReport {
        MetricsReport {
            station_id: station.into(),
            model: "VLSTM-E".into(),
            mape_percent: mape,
            mae,
            mse,
            rmse,
            n: 10,
            mape_excluded: 0,
            space: MetricSpace::Scaled,
        }
    }

    #[test]
    fn hand_values() {
        assert_eq!(residuals(&[100.0], &[90.0]).unwrap(), vec![10.0]);
        assert_eq!(residuals(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        let e = [3.0, -4.0];
        assert_eq!(mse(&e).unwrap(), 12.5);
        assert_eq!(rmse(&e).unwrap(), 12.5f64.sqrt());
        assert_eq!(mae(&e).unwrap(), 3.5);
        let m = mape(&[100.0, 200.0], &[90.0, 220.0], ZeroPolicy::Error).unwrap();
        assert!((m.percent - 10.0).abs() < 1e-12);
        assert_eq!(
            mape(&[5.0, 7.0], &[5.0, 7.0], ZeroPolicy::default())
                .unwrap()
                .percent,
            0.0
        );
    }

    #[test]
    fn zero_policies() {
        let m = mape(&[0.0, 100.0], &[3.0, 90.0], ZeroPolicy::default()).unwrap();
        assert_eq!((m.used, m.excluded), (1, 1));
        assert!((m.percent - 10.0).abs() < 1e-12);
        assert_eq!(
            mape(&[0.0, 100.0], &[3.0, 90.0], ZeroPolicy::Error),
            Err(MetricsError::ZeroActual(0))
        );
        assert_eq!(
            mape(&[0.0], &[1.0], ZeroPolicy::default()),
            Err(MetricsError::AllExcluded)
        );
    }

    #[test]
    fn input_errors() {
        assert_eq!(residuals(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(
            residuals(&[1.0], &[]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(mse(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn averaging_reproduces_published_rounding() {
        let rows = [
            report("716076", 9.5954, 0.0312, 0.0018, 0.0422),
            report("717060", 8.8625, 0.0276, 0.0015, 0.0381),
        ];
        let avg = average_report(&rows).unwrap();
        let cells = [avg.mape_percent, avg.mae, avg.mse, avg.rmse].map(|v| format!("{v:.4}"));
        assert_eq!(cells, ["9.2290", "0.0294", "0.0016", "0.0402"]);
        assert_eq!(avg.n, 20);
        assert_eq!(average_report(&rows[..1]).unwrap(), rows[0]);
        let mut other = rows[1].clone();
        other.model = "LSTM".into();
        assert!(average_report(&[rows[0].clone(), other]).is_err());
        assert_eq!(average_report(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn table_layout() {
        let rows = [report("716076", 9.5954, 0.0312, 0.0018, 0.0422)];
        let t = format_table("VLSTM-E", &rows, RowLabel::Station);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "VLSTM-E");
        assert_eq!(
            lines[1],
            "Station ID  MAPE [%]       MAE       MSE      RMSE"
        );
        assert_eq!(
            lines[2],
            "716076        9.5954    0.0312    0.0018    0.0422"
        );
        let mut csv = Vec::new();
        write_csv(&mut csv, &rows).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "716076,VLSTM-E,scaled,10,0,9.5954,0.0312,0.0018,0.0422"
        );
    }
}

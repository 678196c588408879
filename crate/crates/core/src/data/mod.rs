//! Traffic-flow series and the preprocessing pipeline:
//! ingest → impute → aggregate to 15 minutes → split → scale → window.

mod aggregate;
mod impute;
mod ingest;
mod scaler;
mod window;

pub use aggregate::aggregate_15min;
pub use impute::{impute_spline, NaturalCubicSpline, MIN_PRESENT};
pub use ingest::{ingest_csv, ingest_path, write_raw_csv, Column, CsvSchema};
pub use scaler::MinMaxScaler;
pub use window::{
    prepare, split, window, window_with, PreparedData, TestLookback, WindowedDataset,
    DEFAULT_LOOKBACK,
};

use std::io::Write;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::DataError;

/// Raw detector interval, seconds.
pub const RAW_STEP: i64 = 300;
/// Aggregated interval, seconds.
pub const AGG_STEP: i64 = 900;

const TS_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Formats epoch seconds as `YYYY-MM-DD HH:MM:SS` (UTC).
pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.naive_utc().format(TS_FORMAT).to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses epoch seconds, ISO-8601 (`T` or space separated, optional offset),
/// the PeMS export form `MM/DD/YYYY HH:MM:SS`, or a bare `YYYY-MM-DD`
/// (midnight).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    [
        TS_FORMAT,
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M:%S",
        "%m/%d/%Y %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    .or_else(|| {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()?
            .and_hms_opt(0, 0, 0)
    })
    .map(|d| d.and_utc().timestamp())
}

/// Spline-imputes a raw series and averages it to 15-minute blocks.
pub fn clean(raw: &RawSeries) -> Result<CleanSeries, DataError> {
    aggregate_15min(&impute_spline(raw)?)
}

/// One 5-minute detector reading; `flow == None` marks a missing record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub timestamp: i64,
    pub flow: Option<f64>,
}

/// Timestamped 5-minute flow observations for one station.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub station_id: String,
    observations: Vec<Observation>,
}

impl RawSeries {
    /// Checks ordering, grid alignment, and non-negative flows.
    pub fn new(
        station_id: impl Into<String>,
        observations: Vec<Observation>,
    ) -> Result<Self, DataError> {
        let station_id = station_id.into();
        let mut prev: Option<i64> = None;
        for (i, o) in observations.iter().enumerate() {
            let line = i as u64 + 1;
            if o.timestamp.rem_euclid(RAW_STEP) != 0 {
                return Err(DataError::Misaligned {
                    line,
                    timestamp: format_timestamp(o.timestamp),
                    step_minutes: RAW_STEP / 60,
                });
            }
            if prev.is_some_and(|p| o.timestamp <= p) {
                return Err(DataError::OutOfOrder {
                    line,
                    station: station_id,
                    timestamp: format_timestamp(o.timestamp),
                });
            }
            if let Some(v) = o.flow {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(DataError::NegativeFlow { line, value: v });
                }
            }
            prev = Some(o.timestamp);
        }
        Ok(Self {
            station_id,
            observations,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.observations
            .iter()
            .filter(|o| o.flow.is_none())
            .count()
    }

    pub fn present_count(&self) -> usize {
        self.len() - self.missing_count()
    }
}

/// Gap-free flow series on a contiguous 15-minute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanSeries {
    pub station_id: String,
    start: i64,
    values: Vec<f64>,
}

impl CleanSeries {
    pub fn new(
        station_id: impl Into<String>,
        start: i64,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(DataError::NegativeFlow {
                line: 0,
                value: *bad,
            });
        }
        Ok(Self {
            station_id: station_id.into(),
            start,
            values,
        })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// One step past the last timestamp.
    pub fn end(&self) -> i64 {
        self.start + AGG_STEP * self.values.len() as i64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.start + AGG_STEP * i as i64
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.timestamp(i), v))
    }

    /// Writes `timestamp,flow` rows for audit.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "timestamp,flow")?;
        for (ts, v) in self.iter() {
            writeln!(w, "{},{}", format_timestamp(ts), v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_formats() {
        let expected = 1_546_300_800; // 2019-01-01 00:00:00 UTC
        for s in [
            "2019-01-01 00:00:00",
            "2019-01-01T00:00:00",
            "2019-01-01T00:00:00Z",
            "01/01/2019 00:00:00",
            "2019-01-01",
            "1546300800",
        ] {
            assert_eq!(parse_timestamp(s), Some(expected), "{s}");
        }
        assert_eq!(format_timestamp(expected), "2019-01-01 00:00:00");
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn raw_series_invariants() {
        let obs = |ts, flow| Observation {
            timestamp: ts,
            flow,
        };
        assert!(RawSeries::new("s", vec![obs(0, Some(1.0)), obs(300, None)]).is_ok());
        assert!(matches!(
            RawSeries::new("s", vec![obs(300, Some(1.0)), obs(0, None)]),
            Err(DataError::OutOfOrder { .. })
        ));
        assert!(matches!(
            RawSeries::new("s", vec![obs(10, Some(1.0))]),
            Err(DataError::Misaligned { .. })
        ));
        assert!(matches!(
            RawSeries::new("s", vec![obs(0, Some(-1.0))]),
            Err(DataError::NegativeFlow { .. })
        ));
    }
}

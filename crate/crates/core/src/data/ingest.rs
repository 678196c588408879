//! Delimiter-separated input in the PeMS export shape.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_timestamp, parse_timestamp, Observation, RawSeries, RAW_STEP};
use crate::error::DataError;

/// A column selected by header name or zero-based index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl Column {
    fn resolve(&self, header: Option<&csv::StringRecord>) -> Result<usize, DataError> {
        match (self, header) {
            (Column::Index(i), _) => Ok(*i),
            (Column::Name(n), Some(h)) => h
                .iter()
                .position(|f| f.trim() == n)
                .ok_or_else(|| DataError::UnknownColumn(n.clone())),
            (Column::Name(n), None) => Err(DataError::UnknownColumn(n.clone())),
        }
    }
}

/// Column mapping and parsing options for [`ingest_csv`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub delimiter: char,
    pub has_header: bool,
    pub timestamp: Column,
    pub station: Column,
    pub flow: Column,
    /// Field values treated as missing, in addition to the empty field.
    pub missing_sentinels: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            timestamp: Column::Name("timestamp".into()),
            station: Column::Name("station".into()),
            flow: Column::Name("flow".into()),
            missing_sentinels: vec!["NA".into(), "NaN".into()],
        }
    }
}

/// Reads every station (or only `station_filter`) from delimited text.
///
/// Slots absent from the 5-minute grid between two observations are
/// inserted as missing. Stations come back sorted by id.
pub fn ingest_csv<R: Read>(
    source: R,
    schema: &CsvSchema,
    station_filter: Option<&str>,
) -> Result<Vec<RawSeries>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = if schema.has_header {
        Some(reader.headers()?.clone())
    } else {
        None
    };
    let ts_col = schema.timestamp.resolve(header.as_ref())?;
    let st_col = schema.station.resolve(header.as_ref())?;
    let flow_col = schema.flow.resolve(header.as_ref())?;

    let mut stations: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, what: &str| {
            record.get(col).ok_or_else(|| DataError::Parse {
                line,
                message: format!("missing {what} column {col}"),
            })
        };
        let station = field(st_col, "station")?;
        if station_filter.is_some_and(|f| f != station) {
            continue;
        }
        let raw_ts = field(ts_col, "timestamp")?;
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| DataError::Parse {
            line,
            message: format!("unparseable timestamp {raw_ts:?}"),
        })?;
        if timestamp.rem_euclid(RAW_STEP) != 0 {
            return Err(DataError::Misaligned {
                line,
                timestamp: raw_ts.to_string(),
                step_minutes: RAW_STEP / 60,
            });
        }
        let raw_flow = field(flow_col, "flow")?;
        let flow = if raw_flow.is_empty() || schema.missing_sentinels.iter().any(|s| s == raw_flow)
        {
            None
        } else {
            let v: f64 = raw_flow.parse().map_err(|_| DataError::Parse {
                line,
                message: format!("unparseable flow {raw_flow:?}"),
            })?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DataError::NegativeFlow { line, value: v });
            }
            Some(v)
        };

        let obs = stations.entry(station.to_string()).or_default();
        if let Some(last) = obs.last() {
            if timestamp <= last.timestamp {
                return Err(DataError::OutOfOrder {
                    line,
                    station: station.to_string(),
                    timestamp: raw_ts.to_string(),
                });
            }
            let mut gap = last.timestamp + RAW_STEP;
            while gap < timestamp {
                obs.push(Observation {
                    timestamp: gap,
                    flow: None,
                });
                gap += RAW_STEP;
            }
        }
        obs.push(Observation { timestamp, flow });
    }

    if let Some(f) = station_filter {
        if !stations.contains_key(f) {
            return Err(DataError::UnknownStation(f.to_string()));
        }
    }
    stations
        .into_iter()
        .map(|(id, obs)| RawSeries::new(id, obs))
        .collect()
}

pub fn ingest_path(
    path: &Path,
    schema: &CsvSchema,
    station_filter: Option<&str>,
) -> Result<Vec<RawSeries>, DataError> {
    ingest_csv(File::open(path)?, schema, station_filter)
}

/// Writes series in the default ingest format (`timestamp,station,flow`,
/// empty flow for missing).
pub fn write_raw_csv<W: Write>(mut w: W, series: &[RawSeries]) -> std::io::Result<()> {
    writeln!(w, "timestamp,station,flow")?;
    for s in series {
        for o in s.observations() {
            let ts = format_timestamp(o.timestamp);
            match o.flow {
                Some(v) => writeln!(w, "{ts},{},{v}", s.station_id)?,
                None => writeln!(w, "{ts},{},", s.station_id)?,
            }
        }
    }
    Ok(())
}

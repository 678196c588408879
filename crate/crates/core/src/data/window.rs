//! Supervised lookback windows and the chronological train/test split.

use serde::{Deserialize, Serialize};

use super::{format_timestamp, CleanSeries, MinMaxScaler};
use crate::error::DataError;
use crate::tensor::Tensor;

pub const DEFAULT_LOOKBACK: usize = 12;

/// Where the first test windows take their history from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestLookback {
    /// Test windows use test-range values only; the first `lookback` test
    /// values serve purely as history.
    #[default]
    TestOnly,
    /// The first test windows may reach back into the training range, so
    /// every test value becomes a target.
    AcrossBoundary,
}

/// Scaled `(window → next value)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub station_id: String,
    /// `N × lookback × 1`.
    pub x: Tensor,
    /// `N × 1`.
    pub y: Tensor,
    pub scaler: MinMaxScaler,
    /// Train/test boundary the scaler was fitted against, if any.
    pub boundary: Option<i64>,
    /// Timestamp of each target value.
    pub target_timestamps: Vec<i64>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.x.shape()[1]
    }

    /// Gathers rows into `(batch × lookback × 1, batch × 1)` tensors.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let l = self.lookback();
        let mut xs = Vec::with_capacity(indices.len() * l);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.extend_from_slice(&self.x.data()[i * l..(i + 1) * l]);
            ys.push(self.y.data()[i]);
        }
        (
            Tensor::from_parts_unchecked(vec![indices.len(), l, 1], xs),
            Tensor::from_parts_unchecked(vec![indices.len(), 1], ys),
        )
    }

    /// Targets in scaled space.
    pub fn targets(&self) -> &[f64] {
        self.y.data()
    }

    /// Window `k` as a slice of scaled values.
    pub fn window(&self, k: usize) -> &[f64] {
        let l = self.lookback();
        &self.x.data()[k * l..(k + 1) * l]
    }
}

fn build(
    station_id: &str,
    history: &[f64],
    target_ts: impl Fn(usize) -> i64,
    lookback: usize,
    scaler: MinMaxScaler,
    boundary: Option<i64>,
) -> Result<WindowedDataset, DataError> {
    if lookback == 0 || history.len() <= lookback {
        return Err(DataError::SeriesTooShort {
            len: history.len(),
            lookback,
        });
    }
    let scaled = scaler.apply_all(history);
    let n = scaled.len() - lookback;
    let mut xs = Vec::with_capacity(n * lookback);
    let mut ys = Vec::with_capacity(n);
    for k in 0..n {
        xs.extend_from_slice(&scaled[k..k + lookback]);
        ys.push(scaled[k + lookback]);
    }
    Ok(WindowedDataset {
        station_id: station_id.to_string(),
        x: Tensor::new(vec![n, lookback, 1], xs)?,
        y: Tensor::new(vec![n, 1], ys)?,
        scaler,
        boundary,
        target_timestamps: (0..n).map(|k| target_ts(k + lookback)).collect(),
    })
}

/// Windows a series with a scaler fitted on that same series.
pub fn window(c: &CleanSeries, lookback: usize) -> Result<WindowedDataset, DataError> {
    let scaler = MinMaxScaler::fit(c.values())?;
    window_with(c, lookback, scaler)
}

/// Windows a series with an already fitted scaler.
pub fn window_with(
    c: &CleanSeries,
    lookback: usize,
    scaler: MinMaxScaler,
) -> Result<WindowedDataset, DataError> {
    build(
        &c.station_id,
        c.values(),
        |i| c.timestamp(i),
        lookback,
        scaler,
        None,
    )
}

/// Splits at `boundary`: train holds timestamps before it, test the rest.
pub fn split(c: &CleanSeries, boundary: i64) -> Result<(CleanSeries, CleanSeries), DataError> {
    let cut = c
        .iter()
        .position(|(ts, _)| ts >= boundary)
        .unwrap_or(c.len());
    let side = if cut == 0 {
        Some("train")
    } else if cut == c.len() {
        Some("test")
    } else {
        None
    };
    if let Some(side) = side {
        return Err(DataError::BoundaryOutOfRange {
            boundary: format_timestamp(boundary),
            side,
        });
    }
    let (train, test) = c.values().split_at(cut);
    Ok((
        CleanSeries::new(c.station_id.clone(), c.start(), train.to_vec())?,
        CleanSeries::new(c.station_id.clone(), c.timestamp(cut), test.to_vec())?,
    ))
}

/// Train and test windows sharing one train-fitted scaler.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train_series: CleanSeries,
    pub test_series: CleanSeries,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub scaler: MinMaxScaler,
}

/// Split, fit the scaler on the training range, and window both sides.
pub fn prepare(
    c: &CleanSeries,
    boundary: i64,
    lookback: usize,
    policy: TestLookback,
) -> Result<PreparedData, DataError> {
    let (train_series, test_series) = split(c, boundary)?;
    let scaler = MinMaxScaler::fit(train_series.values())?;
    let mut train = window_with(&train_series, lookback, scaler)?;
    train.boundary = Some(boundary);
    let test = match policy {
        TestLookback::TestOnly => {
            let mut t = window_with(&test_series, lookback, scaler)?;
            t.boundary = Some(boundary);
            t
        }
        TestLookback::AcrossBoundary => {
            let keep = lookback.min(train_series.len());
            let tail = &train_series.values()[train_series.len() - keep..];
            let history: Vec<f64> = tail.iter().chain(test_series.values()).copied().collect();
            let offset = test_series.start() - keep as i64 * super::AGG_STEP;
            build(
                &c.station_id,
                &history,
                |i| offset + i as i64 * super::AGG_STEP,
                lookback,
                scaler,
                Some(boundary),
            )?
        }
    };
    Ok(PreparedData {
        train_series,
        test_series,
        train,
        test,
        scaler,
    })
}

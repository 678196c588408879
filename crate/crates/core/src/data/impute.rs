//! Missing-value imputation with a natural cubic spline.

use super::{Observation, RawSeries, RAW_STEP};
use crate::error::DataError;

/// Fewest present values the spline fit accepts.
pub const MIN_PRESENT: usize = 4;

/// Interpolating cubic spline with zero second derivative at both ends.
#[derive(Clone, Debug)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// Fits through `(xs[i], ys[i])`; `xs` must be strictly increasing.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self, DataError> {
        let n = xs.len();
        if n != ys.len() || n < 2 {
            return Err(DataError::TooFewPresent {
                needed: 2,
                found: n.min(ys.len()),
            });
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        if h.iter().any(|&d| d <= 0.0) {
            return Err(DataError::NotContiguous(
                h.iter().position(|&d| d <= 0.0).unwrap_or(0),
            ));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                upper[j] = h[i];
                rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            for j in 1..k {
                let lower = h[j];
                let w = lower / diag[j - 1];
                diag[j] -= w * upper[j - 1];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    /// Evaluates the spline; outside the knot range the end cubic is extended.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let b = (x - self.xs[i]) / h;
        let a = 1.0 - b;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Fills every missing slot.
///
/// Interior gaps take the value of a natural cubic spline through all present
/// observations (clamped at zero). Leading and trailing gaps copy the nearest
/// present value. Present values are never modified.
pub fn impute_spline(series: &RawSeries) -> Result<RawSeries, DataError> {
    let obs = series.observations();
    let present: Vec<&Observation> = obs.iter().filter(|o| o.flow.is_some()).collect();
    if present.is_empty() {
        return Err(DataError::AllMissing);
    }
    if present.len() == obs.len() {
        return Ok(series.clone());
    }
    if present.len() < MIN_PRESENT {
        return Err(DataError::TooFewPresent {
            needed: MIN_PRESENT,
            found: present.len(),
        });
    }
    // Knot positions in grid steps relative to the first observation keep the
    // system well conditioned.
    let origin = obs[0].timestamp;
    let pos = |ts: i64| (ts - origin) as f64 / RAW_STEP as f64;
    let xs: Vec<f64> = present.iter().map(|o| pos(o.timestamp)).collect();
    let ys: Vec<f64> = present.iter().filter_map(|o| o.flow).collect();
    let spline = NaturalCubicSpline::fit(&xs, &ys)?;
    let (first, last) = (present[0], present[present.len() - 1]);

    let filled = obs
        .iter()
        .map(|o| {
            let flow = match o.flow {
                Some(v) => v,
                None if o.timestamp < first.timestamp => ys[0],
                None if o.timestamp > last.timestamp => ys[ys.len() - 1],
                None => spline.eval(pos(o.timestamp)).max(0.0),
            };
            Observation {
                timestamp: o.timestamp,
                flow: Some(flow),
            }
        })
        .collect();
    RawSeries::new(series.station_id.clone(), filled)
}

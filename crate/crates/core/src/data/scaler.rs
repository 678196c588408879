use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Affine map of the training range onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    lo: f64,
    hi: f64,
}

impl MinMaxScaler {
    /// Fits on training values only.
    pub fn fit(train_values: &[f64]) -> Result<Self, DataError> {
        let mut it = train_values.iter().copied();
        let first = it.next().ok_or(DataError::EmptyScalerInput)?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self::from_bounds(lo, hi)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self, DataError> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(DataError::DegenerateScaler(lo));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * (self.hi - self.lo) + self.lo
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

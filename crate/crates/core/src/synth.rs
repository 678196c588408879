//! Deterministic synthetic detector data with a two-peak commuter profile.
//!
//! ```text
//! flow(t) = max(0, base + amplitude · bimodal(time of day) · weekday(t) + noise)
//! bimodal(τ) = exp(−(τ − 08:00)² / 2σ²) + exp(−(τ − 17:30)² / 2σ²),  σ = 90 min
//! weekday(t) = 1 Monday–Friday, weekend_factor Saturday–Sunday
//! ```
//!
//! Missing records come in bursts: a two-state Markov chain leaves the
//! missing state with probability `1 / missing_burst_mean` per slot (so burst
//! lengths are geometric with that mean) and enters it with the probability
//! that makes `missing_rate` the stationary missing fraction.

use chrono::{Datelike, TimeZone, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::data::{Observation, RawSeries, RAW_STEP};
use crate::error::ConfigError;
use crate::rng::{FlowRng, Stream};

const SLOTS_PER_DAY: i64 = 86_400 / RAW_STEP;
const MORNING_PEAK_MIN: f64 = 8.0 * 60.0;
const EVENING_PEAK_MIN: f64 = 17.5 * 60.0;
const PEAK_SIGMA_MIN: f64 = 90.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// 120 by default: 90 training days and 30 test days.
    pub days: u32,
    /// Flow floor, vehicles per 5 minutes.
    pub base_flow: f64,
    /// Height of each commuter peak above the base.
    pub daily_amplitude: f64,
    /// Peak multiplier on Saturdays and Sundays, in (0, 1].
    pub weekend_factor: f64,
    pub noise_std: f64,
    /// Long-run fraction of missing slots, in [0, 1).
    pub missing_rate: f64,
    /// Mean length of a missing burst, in slots (≥ 1).
    pub missing_burst_mean: f64,
    pub seed: u64,
    pub station_id: String,
    /// First timestamp, `YYYY-MM-DD HH:MM:SS` UTC on the 5-minute grid.
    pub start: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 120,
            base_flow: 20.0,
            daily_amplitude: 80.0,
            weekend_factor: 0.6,
            noise_std: 4.0,
            missing_rate: 0.05,
            missing_burst_mean: 3.0,
            seed: 0,
            station_id: "synth-0".into(),
            start: "2019-01-01 00:00:00".into(),
        }
    }
}

impl SynthConfig {
    /// Checks every field; returns the parsed start timestamp.
    pub fn validate(&self) -> Result<i64, ConfigError> {
        let bad = |field: &str, reason: String| Err(ConfigError::new(field, reason));
        if self.days == 0 {
            return bad("days", "must be at least 1".into());
        }
        if !(self.base_flow >= 0.0 && self.base_flow.is_finite()) {
            return bad(
                "base_flow",
                format!("must be finite and non-negative, got {}", self.base_flow),
            );
        }
        if !self.daily_amplitude.is_finite() {
            return bad("daily_amplitude", "must be finite".into());
        }
        if !(self.weekend_factor > 0.0 && self.weekend_factor <= 1.0) {
            return bad(
                "weekend_factor",
                format!("must be in (0, 1], got {}", self.weekend_factor),
            );
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(
                "noise_std",
                format!("must be finite and non-negative, got {}", self.noise_std),
            );
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(
                "missing_rate",
                format!("must be in [0, 1), got {}", self.missing_rate),
            );
        }
        if !(self.missing_burst_mean >= 1.0 && self.missing_burst_mean.is_finite()) {
            return bad(
                "missing_burst_mean",
                format!("must be at least 1, got {}", self.missing_burst_mean),
            );
        }
        if self.enter_probability() > 1.0 {
            return bad(
                "missing_rate",
                format!(
                    "{} is unreachable with bursts of mean {} (at most {})",
                    self.missing_rate,
                    self.missing_burst_mean,
                    self.missing_burst_mean / (self.missing_burst_mean + 1.0)
                ),
            );
        }
        if self.station_id.is_empty() || self.station_id.contains([',', '\n', '"']) {
            return bad(
                "station_id",
                format!("{:?} is not a plain identifier", self.station_id),
            );
        }
        let start = crate::data::parse_timestamp(&self.start).ok_or_else(|| {
            ConfigError::new("start", format!("unparseable timestamp {:?}", self.start))
        })?;
        if start.rem_euclid(RAW_STEP) != 0 {
            return bad(
                "start",
                format!("{} is not on the 5-minute grid", self.start),
            );
        }
        Ok(start)
    }

    fn leave_probability(&self) -> f64 {
        1.0 / self.missing_burst_mean
    }

    fn enter_probability(&self) -> f64 {
        self.missing_rate * self.leave_probability() / (1.0 - self.missing_rate)
    }

    /// Number of 5-minute slots generated.
    pub fn slots(&self) -> usize {
        self.days as usize * SLOTS_PER_DAY as usize
    }
}

/// Noise-free flow at minute-of-day `minute` on a day with peak factor `day_factor`.
pub fn profile(cfg: &SynthConfig, minute: f64, day_factor: f64) -> f64 {
    let bump = |center: f64| {
        let d = (minute - center) / PEAK_SIGMA_MIN;
        (-0.5 * d * d).exp()
    };
    let bimodal = bump(MORNING_PEAK_MIN) + bump(EVENING_PEAK_MIN);
    cfg.base_flow + cfg.daily_amplitude * bimodal * day_factor
}

fn day_factor(cfg: &SynthConfig, ts: i64) -> f64 {
    let day = Utc.timestamp_opt(ts, 0).single().map(|d| d.weekday());
    match day {
        Some(Weekday::Sat | Weekday::Sun) => cfg.weekend_factor,
        _ => 1.0,
    }
}

/// Generates one station's 5-minute series. Fully determined by the config.
pub fn generate(cfg: &SynthConfig) -> Result<RawSeries, ConfigError> {
    let start = cfg.validate()?;
    let mut rng = FlowRng::stream(cfg.seed, Stream::Synth);
    let (enter, leave) = (cfg.enter_probability(), cfg.leave_probability());
    let mut missing = rng.unit() < cfg.missing_rate;
    let mut obs = Vec::with_capacity(cfg.slots());
    for i in 0..cfg.slots() as i64 {
        let ts = start + i * RAW_STEP;
        let minute = ((ts.rem_euclid(86_400)) / 60) as f64;
        let clean = profile(cfg, minute, day_factor(cfg, ts));
        // Noise is drawn for every slot so the missing pattern does not shift
        // the noise sequence.
        let noise = if cfg.noise_std > 0.0 {
            cfg.noise_std * rng.normal()
        } else {
            0.0
        };
        if i > 0 {
            let u = rng.unit();
            missing = if missing { u >= leave } else { u < enter };
        }
        obs.push(Observation {
            timestamp: ts,
            flow: (!missing).then(|| (clean + noise).max(0.0)),
        });
    }
    Ok(RawSeries::new(cfg.station_id.clone(), obs).expect("generator emits a valid series"))
}

//! Declarative run description, read from TOML.
//!
//! Every key is optional; a missing key takes the default shown below, and
//! an unknown key is an error. The fully resolved config (defaults, then
//! file, then command-line flags) can be written back with
//! [`RunConfig::to_toml`] and re-read to replay a run.
//!
//! ```toml
//! seed = 0                  # root of every random stream
//! model = "vlstm-e"         # or "lstm"
//! out_dir = "flowcast-out"
//!
//! [data]
//! # input = "detectors.csv" # synthetic data from [synth] when absent
//! # station = "716076"
//! boundary = "2019-04-01 00:00:00"   # first test timestamp
//! test_lookback = "test_only"        # or "across_boundary"
//! mape_epsilon = 1e-6
//!
//! [synth]    # see SynthConfig
//! [vlstm_e]  # see VlstmEConfig
//! [lstm]     # see LstmConfig
//! [train]    # see TrainConfig
//!
//! [experiment]
//! seeds = [0, 1, 2, 3, 4]
//! models = ["vlstm-e", "lstm"]
//! ```
//!
//! `seed` under `[synth]` and `[train]` is overwritten by the root seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, CsvSchema, RawSeries, TestLookback};
use crate::error::{ConfigError, DataError, Error};
use crate::models::{LstmConfig, ModelConfig, VlstmEConfig};
use crate::synth::{self, SynthConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[default]
    #[serde(rename = "vlstm-e")]
    VlstmE,
    #[serde(rename = "lstm")]
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::VlstmE, ModelKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::VlstmE => "vlstm-e",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vlstm-e" | "vlstme" | "vlstm_e" => Ok(ModelKind::VlstmE),
            "lstm" => Ok(ModelKind::Lstm),
            _ => Err(format!("unknown model {s:?} (expected vlstm-e or lstm)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Delimited detector export; `None` generates data from `[synth]`.
    pub input: Option<PathBuf>,
    pub schema: CsvSchema,
    /// Keep only this station.
    pub station: Option<String>,
    /// First timestamp of the test range.
    pub boundary: String,
    pub test_lookback: TestLookback,
    /// MAPE skips scaled actuals below this magnitude.
    pub mape_epsilon: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            schema: CsvSchema::default(),
            station: None,
            boundary: "2019-04-01 00:00:00".into(),
            test_lookback: TestLookback::default(),
            mape_epsilon: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub models: Vec<ModelKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            models: ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub vlstm_e: VlstmEConfig,
    pub lstm: LstmConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::default(),
            out_dir: PathBuf::from("flowcast-out"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            vlstm_e: VlstmEConfig::default(),
            lstm: LstmConfig::default(),
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Propagates the root seed and checks every section.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        self.set_seed(self.seed);
        if self.data.input.is_none() {
            self.synth.validate()?;
        }
        self.boundary()?;
        if !(self.data.mape_epsilon >= 0.0 && self.data.mape_epsilon.is_finite()) {
            return Err(ConfigError::new(
                "data.mape_epsilon",
                "must be finite and non-negative",
            ));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::new("train", e.to_string()))?;
        for kind in ModelKind::ALL {
            self.model_config(kind)
                .validate()
                .map_err(|e| ConfigError::new(kind.as_str().replace('-', "_"), e.to_string()))?;
        }
        if self.vlstm_e.lookback != self.lstm.lookback {
            return Err(ConfigError::new(
                "lstm.lookback",
                "both models must use the same lookback so they see the same windows",
            ));
        }
        if self.experiment.seeds.is_empty() || self.experiment.models.is_empty() {
            return Err(ConfigError::new(
                "experiment",
                "needs at least one seed and one model",
            ));
        }
        Ok(self)
    }

    /// Sets the root seed and the seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn boundary(&self) -> Result<i64, ConfigError> {
        data::parse_timestamp(&self.data.boundary).ok_or_else(|| {
            ConfigError::new(
                "data.boundary",
                format!("unparseable timestamp {:?}", self.data.boundary),
            )
        })
    }

    pub fn lookback(&self) -> usize {
        self.vlstm_e.lookback
    }

    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        match kind {
            ModelKind::VlstmE => ModelConfig::VlstmE(self.vlstm_e.clone()),
            ModelKind::Lstm => ModelConfig::Lstm(self.lstm.clone()),
        }
    }

    /// Raw 5-minute series for the run: the input file, or synthetic data.
    pub fn load_series(&self) -> Result<Vec<RawSeries>, Error> {
        let station = self.data.station.as_deref();
        match &self.data.input {
            Some(path) => data::ingest_path(path, &self.data.schema, station)
                .map_err(|e| Error::from(e).context(format!("reading {}", path.display()))),
            None => {
                let s = synth::generate(&self.synth)?;
                match station {
                    Some(id) if id != s.station_id => {
                        Err(DataError::UnknownStation(id.to_string()).into())
                    }
                    _ => Ok(vec![s]),
                }
            }
        }
    }
}

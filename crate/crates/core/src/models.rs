//! The variational LSTM encoder forecaster (VLSTM-E) and the plain LSTM
//! regressor it is compared against.
//!
//! VLSTM-E data flow for one batch of windows `x: B × L × 1`:
//!
//! ```text
//! x ──encoder LSTM──▶ h_L ──┬─ dense ─▶ mu
//!                           └─ dense ─▶ log_var
//! z = mu + exp(log_var / 2) ⊙ eps        (z = mu at inference)
//! z ──MLP (tanh …, sigmoid)──▶ pred       B × 1, the forecast
//! z repeated L times ──decoder LSTM──▶ dense(sigmoid) ──▶ recon   B × L × 1
//! ```
//!
//! The decoder exists only to shape the latent space during training; the
//! forecast path is encoder → latent → MLP.

use serde::{Deserialize, Serialize};

use crate::data::{MinMaxScaler, DEFAULT_LOOKBACK};
use crate::error::{ModelError, TensorError};
use crate::nn::{
    dense_forward, lstm_forward, unroll_repeated, Activation, CellMode, DenseParams, FusedLstm,
    LstmParams,
};
use crate::rng::{FlowRng, Stream};
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;
use crate::variational::{mse_loss, reparameterize, GaussianLatent, LossWeights};

/// Inputs outside this range mean the window was not min-max scaled.
///
/// The scaler is fitted on the training range only, so test values may
/// legitimately fall outside [0, 1]; the bound only has to catch raw counts.
pub const SCALED_RANGE: (f64, f64) = (-1.0, 3.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlstmEConfig {
    pub input_dim: usize,
    pub lookback: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub mlp_hidden: Vec<usize>,
    /// Squash the cell state through a sigmoid (see [`CellMode::Squashed`]).
    pub paper_literal_cell: bool,
}

impl Default for VlstmEConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            lookback: DEFAULT_LOOKBACK,
            encoder_hidden: 64,
            latent_dim: 16,
            decoder_hidden: 64,
            mlp_hidden: vec![32],
            paper_literal_cell: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub lookback: usize,
    pub hidden: usize,
    pub paper_literal_cell: bool,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            lookback: DEFAULT_LOOKBACK,
            hidden: 64,
            paper_literal_cell: false,
        }
    }
}

/// Architecture of either model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    VlstmE(VlstmEConfig),
    Lstm(LstmConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::VlstmE(_) => "VLSTM-E",
            ModelConfig::Lstm(_) => "LSTM",
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            ModelConfig::VlstmE(c) => c.lookback,
            ModelConfig::Lstm(c) => c.lookback,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelConfig::VlstmE(c) => c.input_dim,
            ModelConfig::Lstm(c) => c.input_dim,
        }
    }

    pub fn cell_mode(&self) -> CellMode {
        let literal = match self {
            ModelConfig::VlstmE(c) => c.paper_literal_cell,
            ModelConfig::Lstm(c) => c.paper_literal_cell,
        };
        CellMode::from_literal_flag(literal)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims: Vec<(&str, usize)> = match self {
            ModelConfig::VlstmE(c) => {
                let mut d = vec![
                    ("input_dim", c.input_dim),
                    ("lookback", c.lookback),
                    ("encoder_hidden", c.encoder_hidden),
                    ("latent_dim", c.latent_dim),
                    ("decoder_hidden", c.decoder_hidden),
                ];
                d.extend(c.mlp_hidden.iter().map(|&h| ("mlp_hidden", h)));
                d
            }
            ModelConfig::Lstm(c) => vec![
                ("input_dim", c.input_dim),
                ("lookback", c.lookback),
                ("hidden", c.hidden),
            ],
        };
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(ModelError::InvalidConfig(format!(
                "{name} must be at least 1"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VlstmEParams<T = Tensor> {
    pub encoder: LstmParams<T>,
    pub mu_head: DenseParams<T>,
    pub log_var_head: DenseParams<T>,
    pub decoder: LstmParams<T>,
    pub recon_head: DenseParams<T>,
    /// Hidden layers followed by the sigmoid output layer.
    pub mlp: Vec<DenseParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmRegressorParams<T = Tensor> {
    pub lstm: LstmParams<T>,
    pub head: DenseParams<T>,
}

/// Trainable parameters of either model.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams<T = Tensor> {
    VlstmE(VlstmEParams<T>),
    Lstm(LstmRegressorParams<T>),
}

impl<T> ModelParams<T> {
    /// Maps every leaf in canonical order, passing dotted names.
    pub fn try_map<U, E>(
        &self,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<ModelParams<U>, E> {
        Ok(match self {
            ModelParams::VlstmE(p) => ModelParams::VlstmE(VlstmEParams {
                encoder: p.encoder.try_map("encoder", f)?,
                mu_head: p.mu_head.try_map("mu_head", f)?,
                log_var_head: p.log_var_head.try_map("log_var_head", f)?,
                decoder: p.decoder.try_map("decoder", f)?,
                recon_head: p.recon_head.try_map("recon_head", f)?,
                mlp: p
                    .mlp
                    .iter()
                    .enumerate()
                    .map(|(i, l)| l.try_map(&format!("mlp.{i}"), f))
                    .collect::<Result<_, _>>()?,
            }),
            ModelParams::Lstm(p) => ModelParams::Lstm(LstmRegressorParams {
                lstm: p.lstm.try_map("lstm", f)?,
                head: p.head.try_map("head", f)?,
            }),
        })
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        self.try_map::<U, std::convert::Infallible>(&mut |n, t| Ok(f(n, t)))
            .unwrap_or_else(|e| match e {})
    }

    /// `(name, leaf)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        match self {
            ModelParams::VlstmE(p) => {
                p.encoder.visit("encoder", &mut out);
                p.mu_head.visit("mu_head", &mut out);
                p.log_var_head.visit("log_var_head", &mut out);
                p.decoder.visit("decoder", &mut out);
                p.recon_head.visit("recon_head", &mut out);
                for (i, l) in p.mlp.iter().enumerate() {
                    l.visit(&format!("mlp.{i}"), &mut out);
                }
            }
            ModelParams::Lstm(p) => {
                p.lstm.visit("lstm", &mut out);
                p.head.visit("head", &mut out);
            }
        }
        out
    }

    /// Mutable leaves in canonical order.
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        match self {
            ModelParams::VlstmE(p) => {
                p.encoder.visit_mut(&mut out);
                p.mu_head.visit_mut(&mut out);
                p.log_var_head.visit_mut(&mut out);
                p.decoder.visit_mut(&mut out);
                p.recon_head.visit_mut(&mut out);
                for l in &mut p.mlp {
                    l.visit_mut(&mut out);
                }
            }
            ModelParams::Lstm(p) => {
                p.lstm.visit_mut(&mut out);
                p.head.visit_mut(&mut out);
            }
        }
        out
    }
}

impl ModelParams<Tensor> {
    /// Parameters for `config`, zero-filled (shape template).
    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, &mut |layer| {
            Ok::<_, std::convert::Infallible>(match layer {
                Layer::Lstm(i, h) => Built::Lstm(LstmParams::zeros(i, h)),
                Layer::Dense(i, o, a) => Built::Dense(DenseParams::zeros(i, o, a)),
            })
        })
        .unwrap_or_else(|e| match e {})
    }

    /// Glorot-uniform initialization, deterministic in `rng`.
    pub fn init(config: &ModelConfig, rng: &mut FlowRng) -> Result<Self, ModelError> {
        config.validate()?;
        Self::build(config, &mut |layer| {
            Ok(match layer {
                Layer::Lstm(i, h) => Built::Lstm(LstmParams::init(i, h, rng)?),
                Layer::Dense(i, o, a) => Built::Dense(DenseParams::init(i, o, a, rng)?),
            })
        })
    }

    /// Creates layers in canonical order through `make`.
    fn build<E>(
        config: &ModelConfig,
        make: &mut dyn FnMut(Layer) -> Result<Built, E>,
    ) -> Result<Self, E> {
        let lstm = |make: &mut dyn FnMut(Layer) -> Result<Built, E>, i, h| {
            make(Layer::Lstm(i, h)).map(Built::lstm)
        };
        let dense = |make: &mut dyn FnMut(Layer) -> Result<Built, E>, i, o, a| {
            make(Layer::Dense(i, o, a)).map(Built::dense)
        };
        Ok(match config {
            ModelConfig::VlstmE(c) => {
                let encoder = lstm(make, c.input_dim, c.encoder_hidden)?;
                let mu_head = dense(make, c.encoder_hidden, c.latent_dim, Activation::Linear)?;
                let log_var_head = dense(make, c.encoder_hidden, c.latent_dim, Activation::Linear)?;
                let decoder = lstm(make, c.latent_dim, c.decoder_hidden)?;
                let recon_head = dense(make, c.decoder_hidden, c.input_dim, Activation::Sigmoid)?;
                let mut mlp = Vec::with_capacity(c.mlp_hidden.len() + 1);
                let mut width = c.latent_dim;
                for &h in &c.mlp_hidden {
                    mlp.push(dense(make, width, h, Activation::Tanh)?);
                    width = h;
                }
                mlp.push(dense(make, width, 1, Activation::Sigmoid)?);
                ModelParams::VlstmE(VlstmEParams {
                    encoder,
                    mu_head,
                    log_var_head,
                    decoder,
                    recon_head,
                    mlp,
                })
            }
            ModelConfig::Lstm(c) => ModelParams::Lstm(LstmRegressorParams {
                lstm: lstm(make, c.input_dim, c.hidden)?,
                head: dense(make, c.hidden, 1, Activation::Sigmoid)?,
            }),
        })
    }

    /// Registers every leaf on the tape as a tracked parameter, in canonical
    /// order (so `ParamId(i)` is the i-th entry of [`ModelParams::named`]).
    pub fn bind(&self, tape: &mut GradTape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.param(t.clone()))
    }

    /// Registers every leaf as an untracked constant.
    pub fn bind_constant(&self, tape: &mut GradTape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.constant(t.clone()))
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

enum Layer {
    Lstm(usize, usize),
    Dense(usize, usize, Activation),
}

#[allow(clippy::large_enum_variant)]
enum Built {
    Lstm(LstmParams),
    Dense(DenseParams),
}

impl Built {
    fn lstm(self) -> LstmParams {
        match self {
            Built::Lstm(p) => p,
            Built::Dense(_) => unreachable!("layer kind mismatch"),
        }
    }

    fn dense(self) -> DenseParams {
        match self {
            Built::Dense(p) => p,
            Built::Lstm(_) => unreachable!("layer kind mismatch"),
        }
    }
}

/// Everything needed to run and resume a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub scaler: Option<MinMaxScaler>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, &mut FlowRng::stream(seed, Stream::Init))?;
        Ok(Self {
            config,
            params,
            scaler: None,
            step: 0,
        })
    }

    pub fn name(&self) -> &'static str {
        self.config.name()
    }
}

/// Outputs of a VLSTM-E forward pass.
#[derive(Clone, Copy, Debug)]
pub struct VlstmEOutput {
    /// `B × 1`, in (0, 1).
    pub pred: Var,
    /// `B × L × input_dim`.
    pub recon: Var,
    pub lat: GaussianLatent,
    pub z: Var,
}

fn check_window(
    tape: &GradTape,
    window: Var,
    lookback: usize,
    input_dim: usize,
) -> Result<usize, ModelError> {
    let t = tape.value(window);
    let (b, l, d) = t.dims3("model_input")?;
    if l != lookback || d != input_dim {
        return Err(TensorError::ShapeMismatch {
            op: "model_input",
            left: vec![b, lookback, input_dim],
            right: t.shape().to_vec(),
        }
        .into());
    }
    if let Some((index, &value)) = t
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(SCALED_RANGE.0..=SCALED_RANGE.1).contains(*v))
    {
        return Err(ModelError::UnscaledInput { index, value });
    }
    Ok(b)
}

fn encode(
    tape: &mut GradTape,
    window: Var,
    p: &VlstmEParams<Var>,
    mode: CellMode,
) -> Result<GaussianLatent, TensorError> {
    let enc = lstm_forward(tape, window, &p.encoder, None, None, mode)?;
    let mu = dense_forward(tape, enc.h_last, &p.mu_head)?;
    let log_var = dense_forward(tape, enc.h_last, &p.log_var_head)?;
    GaussianLatent::new(tape, mu, log_var)
}

fn mlp_head(tape: &mut GradTape, z: Var, layers: &[DenseParams<Var>]) -> Result<Var, TensorError> {
    layers.iter().try_fold(z, |h, l| dense_forward(tape, h, l))
}

/// Full training-mode pass: encoder, latent sample, MLP head, and decoder.
///
/// `eps` (`B × latent_dim`, standard normal) selects a latent sample; `None`
/// uses `z = mu`.
pub fn vlstm_e_forward(
    tape: &mut GradTape,
    window: Var,
    p: &VlstmEParams<Var>,
    cfg: &VlstmEConfig,
    eps: Option<Var>,
) -> Result<VlstmEOutput, ModelError> {
    let batch = check_window(tape, window, cfg.lookback, cfg.input_dim)?;
    let mode = CellMode::from_literal_flag(cfg.paper_literal_cell);
    let lat = encode(tape, window, p, mode)?;
    let z = match eps {
        Some(e) => reparameterize(tape, &lat, e)?,
        None => lat.mu,
    };
    let pred = mlp_head(tape, z, &p.mlp)?;

    let fused = FusedLstm::new(tape, &p.decoder, mode)?;
    let zeros = tape.constant(Tensor::zeros(&[batch, cfg.decoder_hidden]));
    let dec = unroll_repeated(tape, &fused, z, cfg.lookback, zeros, zeros)?;
    let all_h = dec.stacked(tape)?;
    let flat = tape.reshape(all_h, &[batch * cfg.lookback, cfg.decoder_hidden])?;
    let out = dense_forward(tape, flat, &p.recon_head)?;
    let recon = tape.reshape(out, &[batch, cfg.lookback, cfg.input_dim])?;
    Ok(VlstmEOutput {
        pred,
        recon,
        lat,
        z,
    })
}

/// Inference pass: encoder and MLP head with `z = mu`; no decoder.
pub fn vlstm_e_predict(
    tape: &mut GradTape,
    window: Var,
    p: &VlstmEParams<Var>,
    cfg: &VlstmEConfig,
) -> Result<Var, ModelError> {
    check_window(tape, window, cfg.lookback, cfg.input_dim)?;
    let lat = encode(
        tape,
        window,
        p,
        CellMode::from_literal_flag(cfg.paper_literal_cell),
    )?;
    Ok(mlp_head(tape, lat.mu, &p.mlp)?)
}

/// Baseline regressor: LSTM over the window, final hidden state through a
/// sigmoid dense head.
pub fn baseline_lstm_forward(
    tape: &mut GradTape,
    window: Var,
    p: &LstmRegressorParams<Var>,
    cfg: &LstmConfig,
) -> Result<Var, ModelError> {
    check_window(tape, window, cfg.lookback, cfg.input_dim)?;
    let mode = CellMode::from_literal_flag(cfg.paper_literal_cell);
    let out = lstm_forward(tape, window, &p.lstm, None, None, mode)?;
    Ok(dense_forward(tape, out.h_last, &p.head)?)
}

/// Loss terms of one training batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub pred_mse: Var,
    /// VLSTM-E only.
    pub recon_mse: Option<Var>,
    /// VLSTM-E only.
    pub kl: Option<Var>,
}

/// Builds the training objective for either model on one batch.
///
/// VLSTM-E: `alpha·MSE(pred, y) + gamma·MSE(recon, x) + beta·KL`.
/// LSTM: `alpha·MSE(pred, y)`.
pub fn batch_loss(
    tape: &mut GradTape,
    config: &ModelConfig,
    params: &ModelParams<Var>,
    x: Var,
    y: Var,
    eps: Option<Var>,
    weights: LossWeights,
) -> Result<BatchLoss, ModelError> {
    match (config, params) {
        (ModelConfig::VlstmE(cfg), ModelParams::VlstmE(p)) => {
            let out = vlstm_e_forward(tape, x, p, cfg, eps)?;
            let terms = crate::variational::composite_loss(
                tape, out.pred, y, out.recon, x, &out.lat, weights,
            )?;
            Ok(BatchLoss {
                total: terms.total,
                pred_mse: terms.pred_mse,
                recon_mse: Some(terms.recon_mse),
                kl: Some(terms.kl),
            })
        }
        (ModelConfig::Lstm(cfg), ModelParams::Lstm(p)) => {
            let pred = baseline_lstm_forward(tape, x, p, cfg)?;
            let pred_mse = mse_loss(tape, pred, y)?;
            let total = tape.scale(pred_mse, weights.alpha)?;
            Ok(BatchLoss {
                total,
                pred_mse,
                recon_mse: None,
                kl: None,
            })
        }
        (c, _) => Err(ModelError::KindMismatch {
            expected: c.name(),
            got: match params {
                ModelParams::VlstmE(_) => "VLSTM-E",
                ModelParams::Lstm(_) => "LSTM",
            },
        }),
    }
}

/// Anything that maps scaled windows to scaled one-step forecasts.
pub trait Forecaster {
    /// `windows: N × L × 1` scaled → `N` scaled predictions.
    fn predict_scaled(&self, windows: &Tensor) -> Result<Vec<f64>, ModelError>;

    fn scaler(&self) -> Option<&MinMaxScaler>;
}

impl Forecaster for ModelState {
    fn predict_scaled(&self, windows: &Tensor) -> Result<Vec<f64>, ModelError> {
        let mut tape = GradTape::new();
        let params = self.params.bind_constant(&mut tape);
        let x = tape.constant(windows.clone());
        let pred = match (&self.config, &params) {
            (ModelConfig::VlstmE(cfg), ModelParams::VlstmE(p)) => {
                vlstm_e_predict(&mut tape, x, p, cfg)?
            }
            (ModelConfig::Lstm(cfg), ModelParams::Lstm(p)) => {
                baseline_lstm_forward(&mut tape, x, p, cfg)?
            }
            (c, _) => {
                return Err(ModelError::KindMismatch {
                    expected: c.name(),
                    got: "mismatched parameters",
                })
            }
        };
        Ok(tape.value(pred).data().to_vec())
    }

    fn scaler(&self) -> Option<&MinMaxScaler> {
        self.scaler.as_ref()
    }
}

/// Scaled predictions for every window, evaluated in chunks.
pub fn predict_batch<F: Forecaster + ?Sized>(
    model: &F,
    windows: &Tensor,
    chunk: usize,
) -> Result<Vec<f64>, ModelError> {
    let (n, l, d) = windows.dims3("predict_batch")?;
    let row = l * d;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let part = Tensor::new(
            vec![end - start, l, d],
            windows.data()[start * row..end * row].to_vec(),
        )?;
        out.extend(model.predict_scaled(&part)?);
    }
    Ok(out)
}

/// Forecast for one window given in original units (vehicles), returned in
/// original units and clamped at zero.
pub fn predict<F: Forecaster + ?Sized>(model: &F, window: &[f64]) -> Result<f64, ModelError> {
    let scaler = model.scaler().ok_or(ModelError::MissingScaler)?;
    let scaled = scaler.apply_all(window);
    let x = Tensor::new(vec![1, window.len(), 1], scaled)?;
    let pred = model.predict_scaled(&x)?;
    Ok(scaler.invert(pred[0]).max(0.0))
}

/// Draws `samples` forecasts with `z` sampled from the posterior instead of
/// fixed at its mean. Original units, clamped at zero.
pub fn predict_sampled(
    model: &ModelState,
    window: &[f64],
    samples: usize,
    rng: &mut FlowRng,
) -> Result<Vec<f64>, ModelError> {
    let scaler = model.scaler.ok_or(ModelError::MissingScaler)?;
    let (ModelConfig::VlstmE(cfg), ModelParams::VlstmE(_)) = (&model.config, &model.params) else {
        return Err(ModelError::KindMismatch {
            expected: "VLSTM-E",
            got: model.name(),
        });
    };
    let x_t = Tensor::new(vec![1, window.len(), 1], scaler.apply_all(window))?;
    (0..samples)
        .map(|_| {
            let mut tape = GradTape::new();
            let vars = match model.params.bind_constant(&mut tape) {
                ModelParams::VlstmE(v) => v,
                ModelParams::Lstm(_) => unreachable!("checked above"),
            };
            let x = tape.constant(x_t.clone());
            check_window(&tape, x, cfg.lookback, cfg.input_dim)?;
            let eps_t = Tensor::new(
                vec![1, cfg.latent_dim],
                (0..cfg.latent_dim).map(|_| rng.normal()).collect(),
            )?;
            let eps = tape.constant(eps_t);
            let lat = encode(
                &mut tape,
                x,
                &vars,
                CellMode::from_literal_flag(cfg.paper_literal_cell),
            )?;
            let z = reparameterize(&mut tape, &lat, eps)?;
            let pred = mlp_head(&mut tape, z, &vars.mlp)?;
            Ok(scaler.invert(tape.value(pred).data()[0]).max(0.0))
        })
        .collect()
}

//! Mini-batch training with Adam (or plain SGD), global-norm gradient
//! clipping, and a linear warm-up of the KL weight.
//!
//! Every random choice comes from streams of the run's root seed: batch
//! order from [`Stream::Shuffle`], latent noise from [`Stream::Noise`]. Two
//! runs with the same seed, data, and config produce bit-identical
//! parameters and histories.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::WindowedDataset;
use crate::error::{ModelError, TensorError, TrainError};
use crate::models::{batch_loss, ModelConfig, ModelParams, ModelState};
use crate::rng::{FlowRng, Stream};
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::variational::LossWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    /// Reshuffle the windows every epoch.
    pub shuffle: bool,
    /// Global L2 norm the gradient is clipped to; 0 disables clipping.
    pub grad_clip: f64,
    /// Epochs over which the KL weight ramps linearly from 0 to `beta`;
    /// 0 starts at full weight.
    pub kl_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            optimizer: Optimizer::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            shuffle: true,
            grad_clip: 5.0,
            kl_warmup_epochs: 10,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad(format!(
                "grad_clip must be non-negative, got {}",
                self.grad_clip
            ));
        }
        self.loss_weights
            .validate()
            .map_err(TrainError::InvalidConfig)
    }

    /// KL weight used during `epoch` (0-based).
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let beta = self.loss_weights.beta;
        if self.kl_warmup_epochs == 0 {
            beta
        } else {
            beta * (epoch as f64 / self.kl_warmup_epochs as f64).min(1.0)
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamMoments {
    pub fn zeros_like(params: &[&mut Tensor]) -> Self {
        let z: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: z.clone(), v: z }
    }
}

fn check_gradients(names: &[String], grads: &[Tensor], step: u64) -> Result<(), TrainError> {
    match grads.iter().position(|g| !g.all_finite()) {
        Some(i) => Err(TrainError::NanGradient {
            param: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            step,
        }),
        None => Ok(()),
    }
}

/// One bias-corrected Adam update at step `t` (1-based):
///
/// ```text
/// m ← β1·m + (1−β1)·g          v ← β2·v + (1−β2)·g²
/// θ ← θ − lr · (m / (1−β1ᵗ)) / (√(v / (1−β2ᵗ)) + ε)
/// ```
///
/// Nothing is modified when any gradient is non-finite; the error names the
/// offending parameter.
pub fn adam_step(
    names: &[String],
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    moments: &mut AdamMoments,
    t: u64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    assert!(t >= 1, "adam step counter starts at 1");
    assert_eq!(params.len(), grads.len());
    check_gradients(names, grads, t)?;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut moments.m)
        .zip(&mut moments.v)
    {
        let p = p.data_mut();
        for (((p, &g), m), v) in p
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// `θ ← θ − lr·g`, with the same non-finite check as [`adam_step`].
pub fn sgd_step(
    names: &[String],
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    t: u64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    check_gradients(names, grads, t)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (p, g) in p.data_mut().iter_mut().zip(g.data()) {
            *p -= cfg.learning_rate * g;
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping. Non-finite norms are left for the optimizer to
/// report.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// Sample-weighted epoch means of the loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    /// KL weight in effect.
    pub beta: f64,
    pub total: f64,
    pub pred_mse: f64,
    pub recon_mse: Option<f64>,
    pub kl: Option<f64>,
    /// Seconds spent in the epoch. Not part of the CSV log, which must be
    /// reproducible byte for byte.
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,steps,beta,total,pred_mse,recon_mse,kl";

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Delimiter-separated epoch log, full precision, no timings.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.steps,
                e.beta,
                e.total,
                e.pred_mse,
                opt(e.recon_mse),
                opt(e.kl)
            );
        }
        out
    }

    pub fn total_wall_secs(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_secs).sum()
    }
}

struct StepLoss {
    total: f64,
    pred_mse: f64,
    recon_mse: Option<f64>,
    kl: Option<f64>,
}

fn is_divergence(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
            | TrainError::NanGradient { .. }
    )
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    names: Vec<String>,
    moments: Option<AdamMoments>,
    noise: FlowRng,
    t: u64,
}

impl Trainer<'_> {
    fn step(
        &mut self,
        state: &mut ModelState,
        data: &WindowedDataset,
        idx: &[usize],
        weights: LossWeights,
    ) -> Result<StepLoss, TrainError> {
        let (xb, yb) = data.batch(idx);
        let mut tape = GradTape::new();
        let vars = state.params.bind(&mut tape);
        let x = tape.constant(xb);
        let y = tape.constant(yb);
        let eps = match &state.config {
            ModelConfig::VlstmE(c) => {
                let n = idx.len() * c.latent_dim;
                let draws = (0..n).map(|_| self.noise.normal()).collect();
                Some(tape.constant(Tensor::new(vec![idx.len(), c.latent_dim], draws)?))
            }
            ModelConfig::Lstm(_) => None,
        };
        let loss = batch_loss(&mut tape, &state.config, &vars, x, y, eps, weights)?;
        let read = |v| tape.value(v).item();
        let out = StepLoss {
            total: read(loss.total)?,
            pred_mse: read(loss.pred_mse)?,
            recon_mse: loss.recon_mse.map(read).transpose()?,
            kl: loss.kl.map(read).transpose()?,
        };
        if !out.total.is_finite() {
            return Err(TensorError::NonFinite { op: "loss" }.into());
        }
        let mut grads = tape.backward(loss.total)?.into_vec();
        clip_global_norm(&mut grads, self.cfg.grad_clip);

        self.t += 1;
        let mut leaves = state.params.leaves_mut();
        match self.cfg.optimizer {
            Optimizer::Adam => {
                let moments = self
                    .moments
                    .get_or_insert_with(|| AdamMoments::zeros_like(&leaves));
                adam_step(&self.names, &mut leaves, &grads, moments, self.t, self.cfg)?;
            }
            Optimizer::Sgd => sgd_step(&self.names, &mut leaves, &grads, self.t, self.cfg)?,
        }
        state.step += 1;
        Ok(out)
    }
}

/// [`train_with`] without a progress callback.
pub fn train(
    model: ModelState,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(ModelState, TrainHistory), TrainError> {
    train_with(model, data, cfg, checkpoint, &mut |_| {})
}

/// Trains for `cfg.epochs` epochs of `⌈N / batch_size⌉` steps each; the last
/// partial batch is trained, not dropped.
///
/// The dataset's scaler is attached to the returned model. With
/// `checkpoint` set the final model is written there; if the loss or a
/// gradient turns non-finite, the model as of the end of the last finite
/// epoch is written instead and the run aborts.
pub fn train_with(
    mut model: ModelState,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelState, TrainHistory), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if data.lookback() != model.config.lookback() {
        return Err(ModelError::InvalidConfig(format!(
            "model lookback {} does not match dataset lookback {}",
            model.config.lookback(),
            data.lookback()
        ))
        .into());
    }
    model.scaler = Some(data.scaler);

    let mut trainer = Trainer {
        cfg,
        names: model.params.named().into_iter().map(|(n, _)| n).collect(),
        moments: None,
        noise: FlowRng::stream(cfg.seed, Stream::Noise),
        t: 0,
    };
    let mut shuffler = FlowRng::stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let mut last_good: ModelParams = model.params.clone();
    let mut last_good_step = model.step;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            shuffler.shuffle(&mut order);
        }
        let weights = LossWeights {
            beta: cfg.beta_at(epoch),
            ..cfg.loss_weights
        };
        let mut sums = [0.0; 4];
        let mut steps = 0;
        for idx in order.chunks(cfg.batch_size) {
            let loss = match trainer.step(&mut model, data, idx, weights) {
                Ok(l) => l,
                Err(e) if is_divergence(&e) => {
                    model.params = last_good;
                    model.step = last_good_step;
                    let written = match checkpoint {
                        Some(p) => {
                            checkpoint::save(&model, p)?;
                            Some(p.to_path_buf())
                        }
                        None => None,
                    };
                    if let TrainError::NanGradient { .. } = e {
                        return Err(e);
                    }
                    return Err(TrainError::Diverged {
                        epoch: epoch + 1,
                        checkpoint: written,
                    });
                }
                Err(e) => return Err(e),
            };
            let w = idx.len() as f64;
            sums[0] += w * loss.total;
            sums[1] += w * loss.pred_mse;
            sums[2] += w * loss.recon_mse.unwrap_or(0.0);
            sums[3] += w * loss.kl.unwrap_or(0.0);
            steps += 1;
        }
        let n = data.len() as f64;
        let vae = matches!(model.config, ModelConfig::VlstmE(_));
        let record = EpochRecord {
            epoch: epoch + 1,
            steps,
            beta: weights.beta,
            total: sums[0] / n,
            pred_mse: sums[1] / n,
            recon_mse: vae.then(|| sums[2] / n),
            kl: vae.then(|| sums[3] / n),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
        last_good.clone_from(&model.params);
        last_good_step = model.step;
    }

    if let Some(p) = checkpoint {
        checkpoint::save(&model, p)?;
    }
    Ok((model, history))
}

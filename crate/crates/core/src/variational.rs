//! Gaussian latent sampling and the variational training objective.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tape::{GradTape, Var};

/// Parameters of a diagonal Gaussian posterior, both `batch × latent_dim`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianLatent {
    pub mu: Var,
    pub log_var: Var,
}

impl GaussianLatent {
    pub fn new(tape: &GradTape, mu: Var, log_var: Var) -> Result<Self, TensorError> {
        let (m, l) = (tape.value(mu), tape.value(log_var));
        if m.shape() != l.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "gaussian_latent",
                left: m.shape().to_vec(),
                right: l.shape().to_vec(),
            });
        }
        Ok(Self { mu, log_var })
    }
}

/// `z = mu + exp(log_var / 2) ⊙ eps`, differentiable in `mu` and `log_var`.
pub fn reparameterize(
    tape: &mut GradTape,
    lat: &GaussianLatent,
    eps: Var,
) -> Result<Var, TensorError> {
    let (mu, e) = (tape.value(lat.mu), tape.value(eps));
    if mu.shape() != e.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "reparameterize",
            left: mu.shape().to_vec(),
            right: e.shape().to_vec(),
        });
    }
    let half = tape.scale(lat.log_var, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    tape.add(lat.mu, noise)
}

/// KL(q ‖ N(0, I)), summed over latent dimensions and averaged over the batch:
/// `−½ Σ (1 + log_var − mu² − exp(log_var))`.
pub fn kl_to_standard_normal(
    tape: &mut GradTape,
    lat: &GaussianLatent,
) -> Result<Var, TensorError> {
    let batch = tape.value(lat.mu).shape()[0] as f64;
    let mu_sq = tape.square(lat.mu)?;
    let var = tape.exp(lat.log_var)?;
    let t = tape.add_scalar(lat.log_var, 1.0)?;
    let t = tape.sub(t, mu_sq)?;
    let t = tape.sub(t, var)?;
    let total = tape.sum(t)?;
    tape.scale(total, -0.5 / batch)
}

/// Mean squared error between two equally shaped values, as a `[1]` tensor.
pub fn mse_loss(tape: &mut GradTape, pred: Var, target: Var) -> Result<Var, TensorError> {
    let (p, t) = (tape.value(pred), tape.value(target));
    if p.shape() != t.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            left: p.shape().to_vec(),
            right: t.shape().to_vec(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// Relative weights of the prediction, KL, and reconstruction terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Prediction MSE.
    pub alpha: f64,
    /// KL divergence.
    pub beta: f64,
    /// Reconstruction MSE.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.001,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!(
                    "loss weight {name} must be finite and non-negative, got {w}"
                ));
            }
        }
        Ok(())
    }
}

/// The three loss terms plus their weighted total, all `[1]` vars.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub pred_mse: Var,
    pub recon_mse: Var,
    pub kl: Var,
}

/// `alpha·MSE(pred, target) + gamma·MSE(recon, window) + beta·KL(lat)`.
pub fn composite_loss(
    tape: &mut GradTape,
    pred: Var,
    target: Var,
    recon: Var,
    window: Var,
    lat: &GaussianLatent,
    weights: LossWeights,
) -> Result<LossTerms, TensorError> {
    weights
        .validate()
        .map_err(|reason| TensorError::InvalidArgument {
            op: "composite_loss",
            reason,
        })?;
    let pred_mse = mse_loss(tape, pred, target)?;
    let recon_mse = mse_loss(tape, recon, window)?;
    let kl = kl_to_standard_normal(tape, lat)?;
    let a = tape.scale(pred_mse, weights.alpha)?;
    let g = tape.scale(recon_mse, weights.gamma)?;
    let b = tape.scale(kl, weights.beta)?;
    let ag = tape.add(a, g)?;
    let total = tape.add(ag, b)?;
    Ok(LossTerms {
        total,
        pred_mse,
        recon_mse,
        kl,
    })
}

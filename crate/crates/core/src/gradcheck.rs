//! Central finite-difference checks of tape gradients.
//!
//! A check builds the same scalar loss twice per perturbed coordinate and
//! compares `(L(θ + h) − L(θ − h)) / 2h` against the reverse-mode gradient.

use crate::error::TensorError;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// Finite-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor: the relative error of a coordinate is
    /// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`, so
    /// near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

/// Worst coordinate found by a check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates compared.
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

impl GradCheck {
    /// Checks every element of every input. `f` registers nothing itself:
    /// it receives the inputs already bound as parameters and returns a
    /// one-element loss.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradReport, TensorError>
    where
        F: Fn(&mut GradTape, &[Var]) -> Result<Var, TensorError>,
    {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?.into_vec();

        let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
            let mut tape = GradTape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let loss = f(&mut tape, &vars)?;
            tape.value(loss).item()
        };

        let mut report = GradReport {
            max_rel_error: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        let mut work = inputs.to_vec();
        for (k, g) in grads.iter().enumerate() {
            for e in 0..work[k].len() {
                let orig = work[k].data()[e];
                work[k].data_mut()[e] = orig + self.step;
                let up = eval(&work)?;
                work[k].data_mut()[e] = orig - self.step;
                let down = eval(&work)?;
                work[k].data_mut()[e] = orig;

                let numeric = (up - down) / (2.0 * self.step);
                let analytic = g.data()[e];
                let denom = analytic.abs().max(numeric.abs()).max(self.floor);
                let rel = (analytic - numeric).abs() / denom;
                report.checked += 1;
                if rel > report.max_rel_error || report.checked == 1 {
                    report.max_rel_error = rel;
                    report.worst = (k, e);
                    report.analytic = analytic;
                    report.numeric = numeric;
                }
            }
        }
        Ok(report)
    }
}

/// Reduces a tensor-valued output to a scalar with fixed weights, so every
/// output element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut GradTape, out: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = tape.constant(weights.reshape(tape.value(out).shape())?);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratics_and_sensitive_to_step() {
        let x = Tensor::vector(vec![0.3, -1.2]).unwrap();
        let ok = GradCheck::default()
            .run(std::slice::from_ref(&x), |t, v| {
                let s = t.square(v[0])?;
                t.sum(s)
            })
            .unwrap();
        assert!(ok.passes(1e-6), "{ok:?}");
        assert_eq!(ok.checked, 2);

        // With a unit step the central difference of x³ is off by h² = 1.
        let coarse = GradCheck {
            step: 1.0,
            floor: 1e-6,
        }
        .run(&[x], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let cube = t.mul(sq, v[0])?;
            t.sum(cube)
        })
        .unwrap();
        assert!(
            (coarse.numeric - coarse.analytic - 1.0).abs() < 1e-9,
            "{coarse:?}"
        );
    }
}

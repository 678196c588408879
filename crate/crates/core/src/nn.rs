//! LSTM and fully connected layers.
//!
//! Parameter structs are generic over their leaf type so the same layout
//! carries concrete [`Tensor`]s (model state, gradients, optimizer moments)
//! and tape [`Var`]s (a forward pass in progress).
//!
//! The LSTM gates carry no bias terms:
//!
//! ```text
//! i = σ(x·U_i + h·W_i)    f = σ(x·U_f + h·W_f)    o = σ(x·U_o + h·W_o)
//! g = tanh(x·U_g + h·W_g)
//! c = f ⊙ c_prev + i ⊙ g          (CellMode::Canonical)
//! c = σ(f ⊙ c_prev + i ⊙ g)       (CellMode::Squashed)
//! h = tanh(c) ⊙ o
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, TensorError};
use crate::rng::FlowRng;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// How the new cell state is formed from the gated candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMode {
    /// `c = f ⊙ c_prev + i ⊙ g`.
    #[default]
    Canonical,
    /// `c = σ(f ⊙ c_prev + i ⊙ g)`, which keeps the cell state in (0, 1).
    Squashed,
}

impl CellMode {
    pub fn from_literal_flag(paper_literal: bool) -> Self {
        if paper_literal {
            CellMode::Squashed
        } else {
            CellMode::Canonical
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Linear,
}

/// Gate weights of one LSTM layer. `u_*` are `input_dim × hidden`,
/// `w_*` are `hidden × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T = Tensor> {
    pub u_i: T,
    pub u_f: T,
    pub u_o: T,
    pub u_g: T,
    pub w_i: T,
    pub w_f: T,
    pub w_o: T,
    pub w_g: T,
}

const LSTM_NAMES: [&str; 8] = ["u_i", "u_f", "u_o", "u_g", "w_i", "w_f", "w_o", "w_g"];

impl<T> LstmParams<T> {
    fn fields(&self) -> [&T; 8] {
        [
            &self.u_i, &self.u_f, &self.u_o, &self.u_g, &self.w_i, &self.w_f, &self.w_o, &self.w_g,
        ]
    }

    fn from_fields([u_i, u_f, u_o, u_g, w_i, w_f, w_o, w_g]: [T; 8]) -> Self {
        Self {
            u_i,
            u_f,
            u_o,
            u_g,
            w_i,
            w_f,
            w_o,
            w_g,
        }
    }

    /// Maps every leaf, passing its dotted name under `prefix`.
    pub fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<LstmParams<U>, E> {
        let fields = self.fields();
        let mut out = Vec::with_capacity(8);
        for (name, leaf) in LSTM_NAMES.iter().zip(fields) {
            out.push(f(&format!("{prefix}.{name}"), leaf)?);
        }
        let arr: [U; 8] = out.try_into().unwrap_or_else(|_| unreachable!());
        Ok(LstmParams::from_fields(arr))
    }

    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> LstmParams<U> {
        self.try_map::<U, std::convert::Infallible>(prefix, &mut |n, t| Ok(f(n, t)))
            .unwrap_or_else(|e| match e {})
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        for (name, leaf) in LSTM_NAMES.iter().zip(self.fields()) {
            out.push((format!("{prefix}.{name}"), leaf));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.extend([
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_o,
            &mut self.u_g,
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
        ]);
    }
}

impl LstmParams<Tensor> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let u = Tensor::zeros(&[input_dim, hidden]);
        let w = Tensor::zeros(&[hidden, hidden]);
        Self::from_fields([
            u.clone(),
            u.clone(),
            u.clone(),
            u,
            w.clone(),
            w.clone(),
            w.clone(),
            w,
        ])
    }

    /// Glorot-uniform weights, per gate matrix.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut FlowRng) -> Result<Self, ModelError> {
        check_dims(&[input_dim, hidden])?;
        let mut p = Self::zeros(input_dim, hidden);
        let mut leaves = Vec::new();
        p.visit_mut(&mut leaves);
        for leaf in leaves {
            glorot_fill(leaf, rng);
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.u_i.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_i.shape()[0]
    }

    fn validate(&self) -> Result<(), TensorError> {
        let (d, h) = (self.input_dim(), self.hidden());
        for (i, leaf) in self.fields().into_iter().enumerate() {
            let expected = if i < 4 { [d, h] } else { [h, h] };
            if leaf.shape() != expected {
                return Err(TensorError::ShapeMismatch {
                    op: "lstm_params",
                    left: expected.to_vec(),
                    right: leaf.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Registers every matrix as a tracked parameter.
    pub fn bind(&self, tape: &mut GradTape) -> Result<LstmParams<Var>, TensorError> {
        self.validate()?;
        Ok(self.map("", &mut |_, t| tape.param(t.clone())))
    }
}

/// Weights, bias, and activation of one fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = Tensor> {
    /// `in × out`.
    pub weight: T,
    /// `out`.
    pub bias: T,
    pub activation: Activation,
}

impl<T> DenseParams<T> {
    pub fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<DenseParams<U>, E> {
        Ok(DenseParams {
            weight: f(&format!("{prefix}.weight"), &self.weight)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
            activation: self.activation,
        })
    }

    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> DenseParams<U> {
        self.try_map::<U, std::convert::Infallible>(prefix, &mut |n, t| Ok(f(n, t)))
            .unwrap_or_else(|e| match e {})
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl DenseParams<Tensor> {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    /// Glorot-uniform weight, zero bias.
    pub fn init(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut FlowRng,
    ) -> Result<Self, ModelError> {
        check_dims(&[input, output])?;
        let mut p = Self::zeros(input, output, activation);
        glorot_fill(&mut p.weight, rng);
        Ok(p)
    }

    pub fn bind(&self, tape: &mut GradTape) -> Result<DenseParams<Var>, TensorError> {
        let out = self.weight.dims2("dense_params")?.1;
        if self.bias.shape() != [out] {
            return Err(TensorError::ShapeMismatch {
                op: "dense_params",
                left: self.weight.shape().to_vec(),
                right: self.bias.shape().to_vec(),
            });
        }
        Ok(self.map("", &mut |_, t| tape.param(t.clone())))
    }
}

fn check_dims(dims: &[usize]) -> Result<(), ModelError> {
    if dims.contains(&0) {
        return Err(ModelError::InvalidConfig(format!(
            "layer dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// Fills a `fan_in × fan_out` matrix from U(−a, a), a = √(6 / (fan_in + fan_out)).
fn glorot_fill(t: &mut Tensor, rng: &mut FlowRng) {
    let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.uniform(-bound, bound);
    }
}

/// Gate matrices concatenated column-wise (i, f, o, g) so one step costs two
/// matrix products.
#[derive(Clone, Copy, Debug)]
pub struct FusedLstm {
    u: Var,
    w: Var,
    hidden: usize,
    mode: CellMode,
}

impl FusedLstm {
    pub fn new(
        tape: &mut GradTape,
        p: &LstmParams<Var>,
        mode: CellMode,
    ) -> Result<Self, TensorError> {
        let u = tape.concat_cols(&[p.u_i, p.u_f, p.u_o, p.u_g])?;
        let w = tape.concat_cols(&[p.w_i, p.w_f, p.w_o, p.w_g])?;
        let hidden = tape.value(p.w_i).shape()[0];
        Ok(Self { u, w, hidden, mode })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Input projection `x·U` for all four gates, `batch × 4H`.
    pub fn project(&self, tape: &mut GradTape, x: Var) -> Result<Var, TensorError> {
        tape.matmul(x, self.u)
    }

    /// One step from an already projected input.
    pub fn step_projected(
        &self,
        tape: &mut GradTape,
        xu: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), TensorError> {
        let h = self.hidden;
        let packed = tape.lstm_step(xu, h_prev, c_prev, self.w, self.mode == CellMode::Squashed)?;
        let hidden = tape.slice_cols(packed, 0, h)?;
        let cell = tape.slice_cols(packed, h, h)?;
        Ok((hidden, cell))
    }

    pub fn step(
        &self,
        tape: &mut GradTape,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), TensorError> {
        let xu = self.project(tape, x)?;
        self.step_projected(tape, xu, h_prev, c_prev)
    }
}

/// One LSTM step. Returns `(h_t, c_t)`.
pub fn lstm_step(
    tape: &mut GradTape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams<Var>,
    mode: CellMode,
) -> Result<(Var, Var), TensorError> {
    let batch = tape.value(x).dims2("lstm_step")?.0;
    let fused = FusedLstm::new(tape, p, mode)?;
    let expected = [batch, fused.hidden];
    for v in [h_prev, c_prev] {
        if tape.value(v).shape() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step",
                left: expected.to_vec(),
                right: tape.value(v).shape().to_vec(),
            });
        }
    }
    fused.step(tape, x, h_prev, c_prev)
}

/// Output of [`lstm_forward`].
#[derive(Clone, Debug)]
pub struct LstmOutput {
    /// Hidden state after each step, each `batch × hidden`.
    pub hs: Vec<Var>,
    pub h_last: Var,
    pub c_last: Var,
}

impl LstmOutput {
    /// All hidden states as `batch × steps × hidden`.
    pub fn stacked(&self, tape: &mut GradTape) -> Result<Var, TensorError> {
        tape.stack_steps(&self.hs)
    }
}

/// Runs the layer left to right over `seq: batch × steps × input_dim`.
/// Missing initial states default to zeros.
pub fn lstm_forward(
    tape: &mut GradTape,
    seq: Var,
    p: &LstmParams<Var>,
    h0: Option<Var>,
    c0: Option<Var>,
    mode: CellMode,
) -> Result<LstmOutput, TensorError> {
    let (batch, steps, _) = tape.value(seq).dims3("lstm_forward")?;
    let inputs = (0..steps)
        .map(|t| tape.time_step(seq, t))
        .collect::<Result<Vec<_>, _>>()?;
    let fused = FusedLstm::new(tape, p, mode)?;
    let zeros = Tensor::zeros(&[batch, fused.hidden]);
    let h0 = h0.unwrap_or_else(|| tape.constant(zeros.clone()));
    let c0 = c0.unwrap_or_else(|| tape.constant(zeros));
    unroll(tape, &fused, &inputs, h0, c0)
}

/// Runs a fused layer over explicit per-step inputs (each `batch × input_dim`).
pub fn unroll(
    tape: &mut GradTape,
    fused: &FusedLstm,
    inputs: &[Var],
    h0: Var,
    c0: Var,
) -> Result<LstmOutput, TensorError> {
    let projected = inputs
        .iter()
        .map(|&x| fused.project(tape, x))
        .collect::<Result<Vec<_>, _>>()?;
    unroll_projected(tape, fused, &projected, h0, c0)
}

/// Feeds the same input at every one of `steps` steps; the input projection
/// is computed once.
pub fn unroll_repeated(
    tape: &mut GradTape,
    fused: &FusedLstm,
    x: Var,
    steps: usize,
    h0: Var,
    c0: Var,
) -> Result<LstmOutput, TensorError> {
    let xu = fused.project(tape, x)?;
    unroll_projected(tape, fused, &vec![xu; steps], h0, c0)
}

fn unroll_projected(
    tape: &mut GradTape,
    fused: &FusedLstm,
    projected: &[Var],
    h0: Var,
    c0: Var,
) -> Result<LstmOutput, TensorError> {
    if projected.is_empty() {
        return Err(TensorError::NoOperands { op: "lstm_forward" });
    }
    let (mut h, mut c) = (h0, c0);
    let mut hs = Vec::with_capacity(projected.len());
    for &xu in projected {
        (h, c) = fused.step_projected(tape, xu, h, c)?;
        hs.push(h);
    }
    Ok(LstmOutput {
        hs,
        h_last: h,
        c_last: c,
    })
}

/// `activation(x·W + b)`.
pub fn dense_forward(
    tape: &mut GradTape,
    x: Var,
    p: &DenseParams<Var>,
) -> Result<Var, TensorError> {
    let lin = tape.matmul(x, p.weight)?;
    let z = tape.add_bias(lin, p.bias)?;
    match p.activation {
        Activation::Sigmoid => tape.sigmoid(z),
        Activation::Tanh => tape.tanh(z),
        Activation::Linear => Ok(z),
    }
}

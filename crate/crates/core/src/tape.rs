//! Eager reverse-mode automatic differentiation.
//!
//! Every operation executed through a [`GradTape`] computes its value
//! immediately and appends a node recording its inputs. [`GradTape::backward`]
//! walks the nodes in reverse, accumulating adjoints additively so that a
//! value used twice receives the sum of both contributions.
//!
//! Broadcasting is limited to scalar-tensor pairs in the binary elementwise
//! ops, plus the explicit row-wise [`GradTape::add_bias`].

use std::sync::atomic::{AtomicU32, Ordering};

use crate::cell::{self, CellDims};
use crate::error::TensorError;
use crate::tensor::{gemm, gemm_new, Layout, Tensor};

/// Inputs to `sigmoid` and `exp` are clamped to this magnitude.
pub use crate::fastmath::EXP_CLAMP;
use crate::fastmath::{exp, sigmoid, tanh};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    idx: usize,
    tape: u32,
}

/// Position of a tracked parameter in registration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseKind {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
    Square,
}

#[derive(Clone, Copy, Debug)]
enum Broadcast {
    None,
    LeftScalar,
    RightScalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Square(usize),
    AddBias(usize, usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        src: usize,
        start: usize,
    },
    TimeStep {
        src: usize,
        step: usize,
    },
    StackSteps(Vec<usize>),
    Reshape(usize),
    LstmStep {
        xu: usize,
        h_prev: usize,
        c_prev: usize,
        w: usize,
        squash: bool,
        /// Activated gates `[i | f | o | g]`, `B × 4H`.
        gates: Vec<f64>,
        /// `tanh(c)`, `B × H`.
        tanh_c: Vec<f64>,
    },
}

impl Op {
    fn for_each_input(&self, f: &mut dyn FnMut(usize)) {
        match self {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b)
            | Op::Add(a, b, _)
            | Op::Sub(a, b, _)
            | Op::Mul(a, b, _)
            | Op::AddBias(a, b) => {
                f(*a);
                f(*b);
            }
            Op::LstmStep {
                xu,
                h_prev,
                c_prev,
                w,
                ..
            } => {
                f(*xu);
                f(*h_prev);
                f(*c_prev);
                f(*w);
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::SliceCols { src: a, .. }
            | Op::TimeStep { src: a, .. } => f(*a),
            Op::ConcatCols(parts) | Op::StackSteps(parts) => parts.iter().for_each(|&p| f(p)),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter feeds this node.
    tracked: bool,
}

/// Ordered record of executed differentiable operations.
#[derive(Debug)]
pub struct GradTape {
    id: u32,
    nodes: Vec<Node>,
    params: Vec<usize>,
    consumed: bool,
}

/// Gradients of a scalar loss, one per tracked parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
    param_nodes: Vec<usize>,
    tape: u32,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0)
    }

    /// Gradient for a parameter variable, `None` for non-parameter vars.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        let pos = self.param_nodes.iter().position(|&n| n == var.idx)?;
        self.grads.get(pos)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradients in parameter registration order.
    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Adds `x·y` (logical `rows × inner` times `inner × cols`) into the
/// gradient of node `i`; a first contribution is written straight into a
/// fresh buffer.
#[allow(clippy::too_many_arguments)]
fn acc_gemm(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    i: usize,
    (rows, inner, cols): (usize, usize, usize),
    x: &[f64],
    xl: Layout,
    y: &[f64],
    yl: Layout,
) {
    if !nodes[i].tracked {
        return;
    }
    match &mut grads[i] {
        Some(d) => gemm(rows, inner, cols, x, xl, y, yl, d.data_mut(), 1.0),
        slot => {
            let d = gemm_new(rows, inner, cols, x, xl, y, yl);
            *slot = Some(Tensor::from_parts_unchecked(
                nodes[i].value.shape().to_vec(),
                d,
            ));
        }
    }
}

/// Adds an owned buffer into the gradient of node `i`, taking it over when
/// nothing has accumulated yet.
fn acc_owned(nodes: &[Node], grads: &mut [Option<Tensor>], i: usize, d: Vec<f64>) {
    if !nodes[i].tracked {
        return;
    }
    match &mut grads[i] {
        Some(g) => g.data_mut().iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot => {
            *slot = Some(Tensor::from_parts_unchecked(
                nodes[i].value.shape().to_vec(),
                d,
            ))
        }
    }
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.idx].value
    }

    /// Registers an untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    /// Registers a tracked parameter; its gradient is returned by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        let id = ParamId(self.params.len());
        let var = self.push_unchecked(value, Op::Param(id));
        self.params.push(var.idx);
        var
    }

    /// The parameter id of a variable created with [`GradTape::param`].
    pub fn param_id(&self, v: Var) -> Option<ParamId> {
        match self.nodes.get(v.idx)?.op {
            Op::Param(id) if v.tape == self.id => Some(id),
            _ => None,
        }
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        let tracked = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            op => {
                let mut any = false;
                op.for_each_input(&mut |i| any |= self.nodes[i].tracked);
                any
            }
        };
        self.nodes.push(Node { value, op, tracked });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        value.ensure_finite(name)?;
        Ok(self.push_unchecked(value, op))
    }

    fn check(&self, vars: &[Var]) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if vars
            .iter()
            .any(|v| v.tape != self.id || v.idx >= self.nodes.len())
        {
            return Err(TensorError::ForeignVar);
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(&[a, b])?;
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, Op::MatMul(a.idx, b.idx))
    }

    /// Dispatches an elementwise op by kind. Unary kinds take one operand,
    /// binary kinds two.
    pub fn ewise(&mut self, kind: EwiseKind, operands: &[Var]) -> Result<Var, TensorError> {
        let op = "ewise";
        let unary = |operands: &[Var]| match operands {
            [x] => Ok(*x),
            _ => Err(TensorError::NoOperands { op }),
        };
        let binary = |operands: &[Var]| match operands {
            [a, b] => Ok((*a, *b)),
            _ => Err(TensorError::NoOperands { op }),
        };
        match kind {
            EwiseKind::Add => binary(operands).and_then(|(a, b)| self.add(a, b)),
            EwiseKind::Sub => binary(operands).and_then(|(a, b)| self.sub(a, b)),
            EwiseKind::Mul => binary(operands).and_then(|(a, b)| self.mul(a, b)),
            EwiseKind::Tanh => unary(operands).and_then(|x| self.tanh(x)),
            EwiseKind::Sigmoid => unary(operands).and_then(|x| self.sigmoid(x)),
            EwiseKind::Exp => unary(operands).and_then(|x| self.exp(x)),
            EwiseKind::Square => unary(operands).and_then(|x| self.square(x)),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var, TensorError> {
        self.check(&[a, b])?;
        let (ta, tb) = (self.val(a), self.val(b));
        let (bc, out) = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y));
            (
                Broadcast::None,
                Tensor::from_parts_unchecked(ta.shape().to_vec(), data.collect()),
            )
        } else if tb.is_scalar() {
            let y = tb.data()[0];
            (Broadcast::RightScalar, ta.map(|x| f(x, y)))
        } else if ta.is_scalar() {
            let x = ta.data()[0];
            (Broadcast::LeftScalar, tb.map(|y| f(x, y)))
        } else {
            return Err(mismatch(name, ta, tb));
        };
        self.push(name, out, op(a.idx, b.idx, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.check(&[x])?;
        let out = self.val(x).map(f);
        self.push(name, out, op)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, TensorError> {
        self.unary("scale", x, |v| v * k, Op::Scale(x.idx, k))
    }

    /// Addition of a constant.
    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var, TensorError> {
        self.unary("add_scalar", x, |v| v + k, Op::AddScalar(x.idx))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("tanh", x, tanh, Op::Tanh(x.idx))
    }

    /// Logistic function `1 / (1 + e^(-x))`, input clamped to ±[`EXP_CLAMP`].
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x.idx))
    }

    /// `e^x` with the input clamped to ±[`EXP_CLAMP`].
    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("exp", x, exp, Op::Exp(x.idx))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("square", x, |v| v * v, Op::Square(x.idx))
    }

    /// Row-wise bias add: `x[r, c] + bias[c]` for `x: R×C`, `bias: C`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(&[x, bias])?;
        let (tx, tb) = (self.val(x), self.val(bias));
        let (_, cols) = tx.dims2("add_bias")?;
        if tb.ndim() != 1 || tb.len() != cols {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        self.push("add_bias", out, Op::AddBias(x.idx, bias.idx))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(&[x])?;
        let out = Tensor::scalar(self.val(x).sum());
        self.push("sum", out, Op::Sum(x.idx))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(&[x])?;
        let t = self.val(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", out, Op::Mean(x.idx))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.check(parts)?;
        let first = parts
            .first()
            .ok_or(TensorError::NoOperands { op: "concat_cols" })?;
        let (rows, _) = self.val(*first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.val(*p);
            let (r, c) = t.dims2("concat_cols")?;
            if r != rows {
                return Err(mismatch("concat_cols", self.val(*first), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.val(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_parts_unchecked(vec![rows, total], data);
        let ids = parts.iter().map(|p| p.idx).collect();
        self.push("concat_cols", out, Op::ConcatCols(ids))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        self.check(&[x])?;
        let t = self.val(x);
        let (rows, cols) = t.dims2("slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: start + len,
                extent: cols,
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for row in t.data().chunks_exact(cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_parts_unchecked(vec![rows, len], data);
        self.push("slice_cols", out, Op::SliceCols { src: x.idx, start })
    }

    /// Selects step `step` of a `batch × steps × features` tensor.
    pub fn time_step(&mut self, x: Var, step: usize) -> Result<Var, TensorError> {
        self.check(&[x])?;
        let t = self.val(x);
        let (b, steps, d) = t.dims3("time_step")?;
        if step >= steps {
            return Err(TensorError::OutOfRange {
                op: "time_step",
                index: step,
                extent: steps,
            });
        }
        let mut data = Vec::with_capacity(b * d);
        for row in t.data().chunks_exact(steps * d) {
            data.extend_from_slice(&row[step * d..(step + 1) * d]);
        }
        let out = Tensor::from_parts_unchecked(vec![b, d], data);
        self.push("time_step", out, Op::TimeStep { src: x.idx, step })
    }

    /// Stacks `batch × features` tensors into `batch × steps × features`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var, TensorError> {
        self.check(steps)?;
        let first = steps
            .first()
            .ok_or(TensorError::NoOperands { op: "stack_steps" })?;
        let (b, d) = self.val(*first).dims2("stack_steps")?;
        for s in steps {
            if self.val(*s).shape() != [b, d] {
                return Err(mismatch("stack_steps", self.val(*first), self.val(*s)));
            }
        }
        let n = steps.len();
        let mut data = vec![0.0; b * n * d];
        for (t, s) in steps.iter().enumerate() {
            let src = self.val(*s).data();
            for r in 0..b {
                data[(r * n + t) * d..(r * n + t + 1) * d]
                    .copy_from_slice(&src[r * d..(r + 1) * d]);
            }
        }
        let out = Tensor::from_parts_unchecked(vec![b, n, d], data);
        let ids = steps.iter().map(|s| s.idx).collect();
        self.push("stack_steps", out, Op::StackSteps(ids))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.check(&[x])?;
        let out = self.val(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x.idx))
    }

    /// One fused LSTM step.
    ///
    /// `xu: B × 4H` is the input projection `x·U`, `w: H × 4H` the recurrent
    /// weights, both laid out as `[i | f | o | g]`. Returns `[h | c]` packed
    /// as `B × 2H`, with `i, f, o = σ(·)`, `g = tanh(·)` over
    /// `xu + h_prev·w`, `c = f ⊙ c_prev + i ⊙ g` (passed through σ when
    /// `squash`), and `h = tanh(c) ⊙ o`.
    pub fn lstm_step(
        &mut self,
        xu: Var,
        h_prev: Var,
        c_prev: Var,
        w: Var,
        squash: bool,
    ) -> Result<Var, TensorError> {
        self.check(&[xu, h_prev, c_prev, w])?;
        let (txu, th, tc, tw) = (
            self.val(xu),
            self.val(h_prev),
            self.val(c_prev),
            self.val(w),
        );
        let (b, h4) = txu.dims2("lstm_step")?;
        let h = h4 / 4;
        if h4 % 4 != 0 || tw.shape() != [h, h4] {
            return Err(mismatch("lstm_step", txu, tw));
        }
        for t in [th, tc] {
            if t.shape() != [b, h] {
                return Err(mismatch("lstm_step", txu, t));
            }
        }
        let mut gates = txu.data().to_vec();
        gemm(
            b,
            h,
            h4,
            th.data(),
            Layout::RowMajor,
            tw.data(),
            Layout::RowMajor,
            &mut gates,
            1.0,
        );
        let mut tanh_c = vec![0.0; b * h];
        let mut out = vec![0.0; b * 2 * h];
        let dims = CellDims {
            batch: b,
            hidden: h,
            squash,
        };
        cell::forward(dims, &mut gates, tc.data(), &mut out, &mut tanh_c);
        let out = Tensor::from_parts_unchecked(vec![b, 2 * h], out);
        let op = Op::LstmStep {
            xu: xu.idx,
            h_prev: h_prev.idx,
            c_prev: c_prev.idx,
            w: w.idx,
            squash,
            gates,
            tanh_c,
        };
        self.push("lstm_step", out, op)
    }

    /// Replays the tape in reverse from a scalar loss.
    ///
    /// Returns one gradient per registered parameter (zeros for parameters
    /// the loss does not depend on). The tape cannot be extended or
    /// differentiated again afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        self.check(&[loss])?;
        let lv = &self.nodes[loss.idx].value;
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.idx + 1, || None);
        grads[loss.idx] = Some(Tensor::filled(&[1], 1.0));

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }

        let out = self
            .params
            .iter()
            .map(|&n| {
                grads
                    .get_mut(n)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[n].value.shape()))
            })
            .collect();
        Ok(Gradients {
            grads: out,
            param_nodes: self.params.clone(),
            tape: self.id,
        })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[i].tracked {
                return;
            }
            let shape = nodes[i].value.shape();
            f(grads[i]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut());
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                acc_gemm(
                    nodes,
                    grads,
                    *a,
                    (m, n, k),
                    gd,
                    Layout::RowMajor,
                    tb.data(),
                    Layout::Transposed,
                );
                acc_gemm(
                    nodes,
                    grads,
                    *b,
                    (k, m, n),
                    ta.data(),
                    Layout::Transposed,
                    gd,
                    Layout::RowMajor,
                );
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let sum: f64 = gd.iter().sum();
                match bc {
                    Broadcast::None => {
                        acc(*a, &mut |da| {
                            da.iter_mut().zip(gd).for_each(|(d, x)| *d += x)
                        });
                        acc(*b, &mut |db| {
                            db.iter_mut().zip(gd).for_each(|(d, x)| *d += sign * x)
                        });
                    }
                    Broadcast::RightScalar => {
                        acc(*a, &mut |da| {
                            da.iter_mut().zip(gd).for_each(|(d, x)| *d += x)
                        });
                        acc(*b, &mut |db| db[0] += sign * sum);
                    }
                    Broadcast::LeftScalar => {
                        acc(*a, &mut |da| da[0] += sum);
                        acc(*b, &mut |db| {
                            db.iter_mut().zip(gd).for_each(|(d, x)| *d += sign * x)
                        });
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                match bc {
                    Broadcast::None => {
                        acc(*a, &mut |da| {
                            for ((d, x), y) in da.iter_mut().zip(gd).zip(vb) {
                                *d += x * y;
                            }
                        });
                        acc(*b, &mut |db| {
                            for ((d, x), y) in db.iter_mut().zip(gd).zip(va) {
                                *d += x * y;
                            }
                        });
                    }
                    Broadcast::RightScalar => {
                        let s = vb[0];
                        acc(*a, &mut |da| {
                            da.iter_mut().zip(gd).for_each(|(d, x)| *d += x * s)
                        });
                        let dot: f64 = gd.iter().zip(va).map(|(x, y)| x * y).sum();
                        acc(*b, &mut |db| db[0] += dot);
                    }
                    Broadcast::LeftScalar => {
                        let dot: f64 = gd.iter().zip(vb).map(|(x, y)| x * y).sum();
                        acc(*a, &mut |da| da[0] += dot);
                        let s = va[0];
                        acc(*b, &mut |db| {
                            db.iter_mut().zip(gd).for_each(|(d, x)| *d += x * s)
                        });
                    }
                }
            }
            Op::Scale(x, k) => acc(*x, &mut |dx| {
                dx.iter_mut().zip(gd).for_each(|(d, v)| *d += k * v)
            }),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |dx| {
                dx.iter_mut().zip(gd).for_each(|(d, v)| *d += v)
            }),
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for ((d, v), y) in dx.iter_mut().zip(gd).zip(y) {
                        *d += v * (1.0 - y * y);
                    }
                })
            }
            Op::Sigmoid(x) | Op::Exp(x) => {
                let y = node.value.data();
                let input = nodes[*x].value.data();
                let is_sigmoid = matches!(node.op, Op::Sigmoid(_));
                acc(*x, &mut |dx| {
                    for (((d, v), y), xin) in dx.iter_mut().zip(gd).zip(y).zip(input) {
                        if xin.abs() > EXP_CLAMP {
                            continue;
                        }
                        let local = if is_sigmoid { y * (1.0 - y) } else { *y };
                        *d += v * local;
                    }
                })
            }
            Op::Square(x) => {
                let xv = nodes[*x].value.data();
                acc(*x, &mut |dx| {
                    for ((d, v), x) in dx.iter_mut().zip(gd).zip(xv) {
                        *d += 2.0 * x * v;
                    }
                })
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |dx| {
                    dx.iter_mut().zip(gd).for_each(|(d, v)| *d += v)
                });
                let cols = nodes[*b].value.len();
                acc(*b, &mut |db| {
                    for row in gd.chunks_exact(cols) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::Sum(x) => {
                let s = gd[0];
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += s));
            }
            Op::Mean(x) => {
                let s = gd[0] / nodes[*x].value.len() as f64;
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += s));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.shape()[1];
                    acc(p, &mut |dp| {
                        for (dst, src) in dp.chunks_exact_mut(w).zip(gd.chunks_exact(total)) {
                            dst.iter_mut()
                                .zip(&src[offset..offset + w])
                                .for_each(|(d, v)| *d += v);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { src, start } => {
                let cols = nodes[*src].value.shape()[1];
                let w = node.value.shape()[1];
                acc(*src, &mut |ds| {
                    for (dst, g) in ds.chunks_exact_mut(cols).zip(gd.chunks_exact(w)) {
                        dst[*start..start + w]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::TimeStep { src, step } => {
                let shape = nodes[*src].value.shape();
                let (steps, d) = (shape[1], shape[2]);
                acc(*src, &mut |ds| {
                    for (dst, g) in ds.chunks_exact_mut(steps * d).zip(gd.chunks_exact(d)) {
                        dst[step * d..(step + 1) * d]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::LstmStep {
                xu,
                h_prev,
                c_prev,
                w,
                squash,
                gates,
                tanh_c,
            } => {
                let (b, h2) = (node.value.shape()[0], node.value.shape()[1]);
                let h = h2 / 2;
                let cp = nodes[*c_prev].value.data();
                let out = node.value.data();
                let mut d_pre = vec![0.0; b * 4 * h];
                let mut d_cp = vec![0.0; b * h];
                let dims = CellDims {
                    batch: b,
                    hidden: h,
                    squash: *squash,
                };
                cell::backward(dims, gates, cp, out, tanh_c, gd, &mut d_pre, &mut d_cp);
                let (th, tw) = (&nodes[*h_prev].value, &nodes[*w].value);
                // d(h_prev) = dPre · Wᵀ, dW = h_prevᵀ · dPre
                acc_gemm(
                    nodes,
                    grads,
                    *h_prev,
                    (b, 4 * h, h),
                    &d_pre,
                    Layout::RowMajor,
                    tw.data(),
                    Layout::Transposed,
                );
                acc_gemm(
                    nodes,
                    grads,
                    *w,
                    (h, b, 4 * h),
                    th.data(),
                    Layout::Transposed,
                    &d_pre,
                    Layout::RowMajor,
                );
                acc_owned(nodes, grads, *c_prev, d_cp);
                acc_owned(nodes, grads, *xu, d_pre);
            }
            Op::StackSteps(parts) => {
                let shape = node.value.shape();
                let (n, d) = (shape[1], shape[2]);
                for (t, &p) in parts.iter().enumerate() {
                    acc(p, &mut |dp| {
                        for (dst, g) in dp.chunks_exact_mut(d).zip(gd.chunks_exact(n * d)) {
                            dst.iter_mut()
                                .zip(&g[t * d..(t + 1) * d])
                                .for_each(|(a, v)| *a += v);
                        }
                    });
                }
            }
        }
    }
}

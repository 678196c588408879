//! Catalog of finite-difference gradient cases: every tape operation,
//! the layers built on them, and both full models.

use super::{model_check, op_check, rand_tensor, SEEDS, TOL};
use flowcast::error::TensorError;
use flowcast::gradcheck::GradReport;
use flowcast::models::{LstmConfig, ModelConfig, VlstmEConfig};
use flowcast::nn::{dense_forward, lstm_step, Activation, CellMode, DenseParams, LstmParams};
use flowcast::rng::FlowRng;
use flowcast::variational::{
    composite_loss, kl_to_standard_normal, mse_loss, reparameterize, GaussianLatent, LossWeights,
};
use flowcast::{EwiseKind, GradTape, Tensor, Var};

type Op = fn(&mut GradTape, &[Var]) -> Result<Var, TensorError>;

pub struct Case {
    pub group: &'static str,
    pub name: String,
    pub check: Box<dyn Fn(u64) -> GradReport>,
}

/// Worst report of `case` over all seeds, and the seed that produced it.
pub fn worst_over_seeds(case: &Case) -> (u64, GradReport) {
    (0..SEEDS)
        .map(|s| (s, (case.check)(s)))
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .expect("at least one seed")
}

pub fn assert_group(group: &str) {
    let cases: Vec<Case> = cases().into_iter().filter(|c| c.group == group).collect();
    assert!(!cases.is_empty(), "no cases in group {group}");
    for case in &cases {
        let (seed, r) = worst_over_seeds(case);
        assert!(r.passes(TOL), "{} seed {seed}: {r:?}", case.name);
    }
}

fn op_case(group: &'static str, name: &str, shapes: &[&[usize]], out_len: usize, op: Op) -> Case {
    let shapes: Vec<Vec<usize>> = shapes.iter().map(|s| s.to_vec()).collect();
    Case {
        group,
        name: name.to_string(),
        check: Box::new(move |seed| {
            let mut rng = FlowRng::new(seed);
            let inputs: Vec<Tensor> = shapes
                .iter()
                .map(|s| rand_tensor(&mut rng, s, -1.0, 1.0))
                .collect();
            op_check(&inputs, out_len, seed, op)
        }),
    }
}

fn case(group: &'static str, name: String, check: impl Fn(u64) -> GradReport + 'static) -> Case {
    Case {
        group,
        name,
        check: Box::new(check),
    }
}

fn lstm_cell_check(mode: CellMode, seed: u64) -> GradReport {
    let mut rng = FlowRng::new(seed);
    let (batch, d, h) = (3, 2, 4);
    let p = LstmParams::init(d, h, &mut rng).unwrap();
    let mut inputs: Vec<Tensor> = Vec::new();
    let mut named = Vec::new();
    p.visit("", &mut named);
    inputs.extend(named.into_iter().map(|(_, t)| t.clone()));
    inputs.push(rand_tensor(&mut rng, &[batch, d], -1.0, 1.0));
    inputs.push(rand_tensor(&mut rng, &[batch, h], -1.0, 1.0));
    inputs.push(rand_tensor(&mut rng, &[batch, h], -1.0, 1.0));
    op_check(&inputs, 2 * batch * h, seed, move |t, v| {
        let mut it = v.iter().copied();
        let pv = p.map("", &mut |_, _| it.next().unwrap());
        let (x, h0, c0) = (v[8], v[9], v[10]);
        let (h1, c1) = lstm_step(t, x, h0, c0, &pv, mode)?;
        // Second step so the recurrent path feeds back into itself.
        let (h2, c2) = lstm_step(t, x, h1, c1, &pv, mode)?;
        t.concat_cols(&[h2, c2])
    })
}

fn dense_check(act: Activation, seed: u64) -> GradReport {
    let mut rng = FlowRng::new(seed);
    let p = DenseParams::init(3, 2, act, &mut rng).unwrap();
    let bias = rand_tensor(&mut rng, &[2], -0.5, 0.5);
    let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    op_check(&[p.weight.clone(), bias, x], 8, seed, move |t, v| {
        let dp = DenseParams {
            weight: v[0],
            bias: v[1],
            activation: act,
        };
        dense_forward(t, v[2], &dp)
    })
}

fn reparameterize_check(seed: u64) -> GradReport {
    let mut rng = FlowRng::new(seed);
    let mu = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let lv = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let eps = rand_tensor(&mut rng, &[3, 2], -2.0, 2.0);
    op_check(&[mu, lv], 6, seed, move |t, v| {
        let lat = GaussianLatent::new(t, v[0], v[1])?;
        let e = t.constant(eps.clone());
        reparameterize(t, &lat, e)
    })
}

fn small_vlstm_e(literal: bool) -> ModelConfig {
    ModelConfig::VlstmE(VlstmEConfig {
        lookback: 4,
        encoder_hidden: 3,
        latent_dim: 2,
        decoder_hidden: 3,
        mlp_hidden: vec![3],
        paper_literal_cell: literal,
        ..VlstmEConfig::default()
    })
}

fn small_lstm(literal: bool) -> ModelConfig {
    ModelConfig::Lstm(LstmConfig {
        lookback: 4,
        hidden: 3,
        paper_literal_cell: literal,
        ..LstmConfig::default()
    })
}

pub fn cases() -> Vec<Case> {
    let mut out = vec![op_case(
        "matmul",
        "matmul",
        &[&[3, 4], &[4, 2]],
        6,
        |t, v| t.matmul(v[0], v[1]),
    )];

    for kind in [EwiseKind::Add, EwiseKind::Sub, EwiseKind::Mul] {
        let (same, right, left): (Op, Op, Op) = match kind {
            EwiseKind::Add => (
                |t, v| t.add(v[0], v[1]),
                |t, v| t.ewise(EwiseKind::Add, &[v[0], v[1]]),
                |t, v| t.add(v[1], v[0]),
            ),
            EwiseKind::Sub => (
                |t, v| t.sub(v[0], v[1]),
                |t, v| t.ewise(EwiseKind::Sub, &[v[0], v[1]]),
                |t, v| t.sub(v[1], v[0]),
            ),
            _ => (
                |t, v| t.mul(v[0], v[1]),
                |t, v| t.ewise(EwiseKind::Mul, &[v[0], v[1]]),
                |t, v| t.mul(v[1], v[0]),
            ),
        };
        out.push(op_case(
            "binary",
            &format!("{kind:?}"),
            &[&[2, 3], &[2, 3]],
            6,
            same,
        ));
        out.push(op_case(
            "binary",
            &format!("{kind:?} scalar right"),
            &[&[2, 3], &[1]],
            6,
            right,
        ));
        out.push(op_case(
            "binary",
            &format!("{kind:?} scalar left"),
            &[&[2, 3], &[1]],
            6,
            left,
        ));
    }

    let unary: [(&str, Op); 6] = [
        ("tanh", |t, v| t.tanh(v[0])),
        ("sigmoid", |t, v| t.sigmoid(v[0])),
        ("exp", |t, v| t.exp(v[0])),
        ("square", |t, v| t.square(v[0])),
        ("scale", |t, v| t.scale(v[0], -2.5)),
        ("add_scalar", |t, v| t.add_scalar(v[0], 0.7)),
    ];
    for (name, op) in unary {
        out.push(op_case("unary", name, &[&[3, 2]], 6, op));
    }

    out.push(op_case("reduce", "sum", &[&[3, 2]], 1, |t, v| t.sum(v[0])));
    out.push(op_case("reduce", "mean", &[&[3, 2]], 1, |t, v| {
        t.mean(v[0])
    }));
    out.push(op_case(
        "reduce",
        "add_bias",
        &[&[3, 2], &[2]],
        6,
        |t, v| t.add_bias(v[0], v[1]),
    ));

    out.push(op_case(
        "layout",
        "concat_cols",
        &[&[2, 3], &[2, 1]],
        14,
        |t, v| t.concat_cols(&[v[0], v[1], v[0]]),
    ));
    out.push(op_case("layout", "slice_cols", &[&[2, 5]], 4, |t, v| {
        t.slice_cols(v[0], 1, 2)
    }));
    out.push(op_case("layout", "time_step", &[&[2, 3, 2]], 4, |t, v| {
        t.time_step(v[0], 1)
    }));
    out.push(op_case(
        "layout",
        "stack_steps",
        &[&[2, 3], &[2, 3]],
        18,
        |t, v| t.stack_steps(&[v[0], v[1], v[0]]),
    ));
    out.push(op_case("layout", "reshape", &[&[2, 3]], 6, |t, v| {
        t.reshape(v[0], &[3, 2])
    }));

    let shapes: &[&[usize]] = &[&[3, 8], &[3, 2], &[3, 2], &[2, 8]];
    out.push(op_case("lstm", "fused step", shapes, 12, |t, v| {
        t.lstm_step(v[0], v[1], v[2], v[3], false)
    }));
    out.push(op_case(
        "lstm",
        "fused step squashed",
        shapes,
        12,
        |t, v| t.lstm_step(v[0], v[1], v[2], v[3], true),
    ));
    for mode in [CellMode::Canonical, CellMode::Squashed] {
        out.push(case("lstm", format!("two cell steps {mode:?}"), move |s| {
            lstm_cell_check(mode, s)
        }));
    }

    for act in [Activation::Sigmoid, Activation::Tanh, Activation::Linear] {
        out.push(case("dense", format!("dense {act:?}"), move |s| {
            dense_check(act, s)
        }));
    }

    out.push(case(
        "variational",
        "reparameterize".into(),
        reparameterize_check,
    ));
    out.push(op_case(
        "variational",
        "kl",
        &[&[3, 2], &[3, 2]],
        1,
        |t, v| {
            let lat = GaussianLatent::new(t, v[0], v[1])?;
            kl_to_standard_normal(t, &lat)
        },
    ));
    out.push(op_case(
        "variational",
        "mse",
        &[&[4, 1], &[4, 1]],
        1,
        |t, v| mse_loss(t, v[0], v[1]),
    ));
    out.push(op_case(
        "variational",
        "composite",
        &[&[3, 1], &[3, 1], &[3, 4, 1], &[3, 4, 1], &[3, 2], &[3, 2]],
        1,
        |t, v| {
            let lat = GaussianLatent::new(t, v[4], v[5])?;
            let w = LossWeights {
                alpha: 1.0,
                beta: 0.3,
                gamma: 0.6,
            };
            Ok(composite_loss(t, v[0], v[1], v[2], v[3], &lat, w)?.total)
        },
    ));

    for literal in [false, true] {
        let v = small_vlstm_e(literal);
        out.push(case(
            "models",
            format!("VLSTM-E literal={literal}"),
            move |s| model_check(&v, s),
        ));
        let l = small_lstm(literal);
        out.push(case(
            "models",
            format!("LSTM literal={literal}"),
            move |s| model_check(&l, s),
        ));
    }
    out
}

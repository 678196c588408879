#![allow(dead_code)]

pub mod criteria;
pub mod grad;

use flowcast::gradcheck::{weighted_sum, GradCheck, GradReport};
use flowcast::models::{batch_loss, ModelConfig, ModelParams};
use flowcast::rng::FlowRng;
use flowcast::variational::LossWeights;
use flowcast::{GradTape, Tensor, Var};

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;

pub fn rand_tensor(rng: &mut FlowRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(lo, hi)).collect(),
    )
    .unwrap()
}

/// Rebuilds a parameter set from vars listed in canonical order.
pub fn params_from_vars(template: &ModelParams, vars: &[Var]) -> ModelParams<Var> {
    let mut it = vars.iter().copied();
    template.map(&mut |_, _| it.next().expect("one var per leaf"))
}

/// Finite-difference check of a whole model's training loss with respect
/// to every parameter, on a small random batch.
pub fn model_check(config: &ModelConfig, seed: u64) -> GradReport {
    let mut rng = FlowRng::new(1000 + seed);
    let params = ModelParams::init(config, &mut rng).unwrap();
    let (l, batch) = (config.lookback(), 3);
    let x = rand_tensor(&mut rng, &[batch, l, 1], 0.0, 1.0);
    let y = rand_tensor(&mut rng, &[batch, 1], 0.0, 1.0);
    let eps = match config {
        ModelConfig::VlstmE(c) => Some(rand_tensor(&mut rng, &[batch, c.latent_dim], -1.5, 1.5)),
        ModelConfig::Lstm(_) => None,
    };
    // Heavier KL weight than training uses, so the KL path is exercised.
    let weights = LossWeights {
        alpha: 1.0,
        beta: 0.5,
        gamma: 0.7,
    };
    let leaves: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    GradCheck::default()
        .run(&leaves, |tape: &mut GradTape, vars: &[Var]| {
            let p = params_from_vars(&params, vars);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let ev = eps.clone().map(|e| tape.constant(e));
            let loss = batch_loss(tape, config, &p, xv, yv, ev, weights).map_err(|e| match e {
                flowcast::error::ModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            Ok(loss.total)
        })
        .unwrap()
}

/// Weighted-sum check of a tensor-valued function of `inputs`.
pub fn op_check<F>(inputs: &[Tensor], out_len: usize, seed: u64, f: F) -> GradReport
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var, flowcast::error::TensorError>,
{
    let mut rng = FlowRng::new(5000 + seed);
    let w = rand_tensor(&mut rng, &[out_len], 0.5, 1.5);
    GradCheck::default()
        .run(inputs, |tape, vars| {
            let out = f(tape, vars)?;
            weighted_sum(tape, out, &w)
        })
        .unwrap()
}

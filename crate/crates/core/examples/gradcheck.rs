//! Compare reverse-mode gradients of the full VLSTM-E loss with central
//! finite differences.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use flowcast::gradcheck::GradCheck;
use flowcast::models::{batch_loss, ModelConfig, ModelParams, VlstmEConfig};
use flowcast::rng::FlowRng;
use flowcast::variational::LossWeights;
use flowcast::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig::VlstmE(VlstmEConfig {
        encoder_hidden: 6,
        latent_dim: 3,
        decoder_hidden: 5,
        mlp_hidden: vec![8, 4],
        ..Default::default()
    });
    let mut rng = FlowRng::new(3);
    let params = ModelParams::init(&config, &mut rng)?;
    let batch = 4;
    let rand = |rng: &mut FlowRng, shape: &[usize], lo, hi| {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.uniform(lo, hi)).collect(),
        )
    };
    let x = rand(&mut rng, &[batch, 12, 1], 0.0, 1.0)?;
    let y = rand(&mut rng, &[batch, 1], 0.0, 1.0)?;
    let eps = rand(&mut rng, &[batch, 3], -1.0, 1.0)?;

    let leaves: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let report = GradCheck::default().run(&leaves, |tape, vars| {
        let mut it = vars.iter().copied();
        let p = params.map(&mut |_, _| it.next().unwrap());
        let (xv, yv, ev) = (
            tape.constant(x.clone()),
            tape.constant(y.clone()),
            tape.constant(eps.clone()),
        );
        let loss = batch_loss(tape, &config, &p, xv, yv, Some(ev), LossWeights::default())
            .map_err(|e| match e {
                flowcast::error::ModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
        Ok(loss.total)
    })?;
    println!("{} parameters checked", report.checked);
    println!(
        "worst relative error {:.2e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error,
        names[report.worst.0],
        report.worst.1,
        report.analytic,
        report.numeric
    );
    println!(
        "{}",
        if report.passes(1e-4) {
            "ok"
        } else {
            "MISMATCH"
        }
    );
    Ok(())
}

//! One LSTM step in both cell modes, and a short unrolled sequence.
//!
//! ```text
//! cargo run --release --example lstm_cell
//! ```

use flowcast::nn::{lstm_forward, lstm_step, CellMode, LstmParams};
use flowcast::rng::FlowRng;
use flowcast::{GradTape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // With zero weights every gate is σ(0) = ½ and the candidate is 0, so
    // c = ½·c_prev and h = ½·tanh(c).
    for mode in [CellMode::Canonical, CellMode::Squashed] {
        let mut tape = GradTape::new();
        let p = LstmParams::zeros(1, 1).bind(&mut tape)?;
        let x = tape.constant(Tensor::filled(&[1, 1], 0.3));
        let h0 = tape.constant(Tensor::zeros(&[1, 1]));
        let c0 = tape.constant(Tensor::filled(&[1, 1], 1.0));
        let (h, c) = lstm_step(&mut tape, x, h0, c0, &p, mode)?;
        println!(
            "{mode:?}: h = {:.4}, c = {:.4}",
            tape.value(h).data()[0],
            tape.value(c).data()[0]
        );
    }

    // A random 8-unit layer over a 12-step ramp.
    let mut rng = FlowRng::new(1);
    let mut tape = GradTape::new();
    let p = LstmParams::init(1, 8, &mut rng)?.bind(&mut tape)?;
    let xs = Tensor::new(vec![1, 12, 1], (0..12).map(|i| i as f64 / 11.0).collect())?;
    let x = tape.constant(xs);
    let out = lstm_forward(&mut tape, x, &p, None, None, CellMode::Canonical)?;
    for (t, h) in out.hs.iter().enumerate() {
        println!("t={t:2} h[0..3] = {:.4?}", &tape.value(*h).data()[..3]);
    }
    Ok(())
}

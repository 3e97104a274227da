//! Times one forward/backward pass of the default network on a batch of 8 at 64×64.

use std::time::Instant;

use betaseg::network::{backward_traced, build_and_init, forward_traced};
use betaseg::{NetworkSpec, Tensor};

fn main() -> betaseg::Result<()> {
    let spec = NetworkSpec::default();
    let params = build_and_init(&spec)?;
    let images = Tensor::full(&[8, 1, 64, 64], 0.5);
    let start = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        let (logits, trace) = forward_traced(&params, &images)?;
        let grads = backward_traced(&params, &trace, &logits)?;
        std::hint::black_box(grads);
    }
    println!("{:.3} s per batch step", start.elapsed().as_secs_f64() / reps as f64);
    Ok(())
}

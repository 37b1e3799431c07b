//! Rough throughput check for one copula training step at experiment scale.

use dcc_core::nn::{adam_step, build_net, AdamState, BatchBuffers, Gradients};
use std::time::Instant;

fn main() {
    let mut net = build_net::<f64>(2, 1190, 2.0, 4.0, 0).unwrap();
    let m = 65536usize;
    let x: Vec<f64> = (0..m * 2)
        .map(|i| ((i.wrapping_mul(2654435761)) % 1000) as f64 / 1000.0)
        .collect();
    let mut buf = BatchBuffers::new();
    let mut grads = Gradients::zeros_like(&net);
    let mut state = AdamState::new(&net);
    let upstream: Vec<f64> = (0..m).map(|i| (i % 7) as f64 * 1e-6).collect();

    net.forward_batch(&x, m, &mut buf); // warm up

    let steps = 10;
    let t0 = Instant::now();
    for _ in 0..steps {
        net.forward_batch(&x, m, &mut buf);
        grads.clear();
        net.backward_batch(&mut buf, &upstream, &mut grads);
        net.spectral_normalize(1);
        adam_step(&mut net, &grads, &mut state, 1e-9);
    }
    let dt = t0.elapsed().as_secs_f64() / steps as f64;
    let flops = (m as f64) * 17766.0 * 3.0 * 2.0;
    println!(
        "per step: {:.1} ms  ({:.1} GFLOP/s)",
        dt * 1e3,
        flops / dt / 1e9
    );
    println!(
        "criterion-1 estimate: 4 trainings x 2500 steps = {:.0} s single-thread",
        dt * 10000.0
    );
}

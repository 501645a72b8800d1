//! A small dense network fit by Adam, with its backward pass checked
//! against central differences.

use geodex::nn::{adam_step, grad_check, mlp_specs, Activation, AdamConfig, AdamState, Net};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_and_grad(net: &Net, x: &[f64], y: &[f64], n: usize) -> (f64, Vec<f64>) {
    let acts = net.forward(x, n).unwrap();
    let out = acts.output();
    let diff: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let dy: Vec<f64> = diff.iter().map(|d| d / n as f64).collect();
    let mut g = vec![0.0; net.param_count()];
    net.backward(&acts, &dy, &mut g).unwrap();
    (loss, g)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Net::new(mlp_specs(&[2, 32, 32, 1], Activation::Relu, Activation::Identity), &mut rng);
    let n = 256;
    let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.chunks(2).map(|p| (3.0 * p[0]).sin() * p[1]).collect();

    let err = grad_check(
        |p| {
            let mut m = net.clone();
            m.params_mut().copy_from_slice(p);
            loss_and_grad(&m, &x, &y, n)
        },
        net.params(),
        50,
        &mut rng,
    );
    println!("gradient check max relative error {err:.2e}");

    let mut state = AdamState::new(net.param_count(), AdamConfig::with_lr(3e-3));
    for step in 0..=2000 {
        let (loss, g) = loss_and_grad(&net, &x, &y, n);
        if step % 500 == 0 {
            println!("step {step:>4}  mse/2 {loss:.5}");
        }
        adam_step(net.params_mut(), &g, &mut state).unwrap();
    }
}

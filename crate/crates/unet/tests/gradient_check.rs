use meltpool_unet::loss::{bce_grad, bce_loss};
use meltpool_unet::{Tensor, UNet, UNetConfig, UpMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst relative error between backprop and central differences over
/// every parameter, plus the parameter count.
fn check(upsample: UpMode, seed: u64) -> (f64, usize) {
    let cfg = UNetConfig {
        input_side: 16,
        base_channels: 2,
        levels: 2,
        upsample,
        ..Default::default()
    };
    let mut net = UNet::<f64>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Biases start at exactly zero, which puts units fed by dead patches
    // right on the ReLU kink; jitter moves the check to a generic point.
    for p in &mut net.params {
        *p += rng.random_range(-0.02..0.02);
    }
    let x = Tensor::from_vec(2, 1, 16, 16, (0..512).map(|_| rng.random_range(0.0..1.0)).collect());
    let labels: Vec<f64> = (0..512).map(|i| ((i / 16) % 16 > 7) as u8 as f64).collect();

    let cache = net.forward(&x).unwrap();
    let d = bce_grad(&cache.probs.data, &labels).unwrap();
    let grads = net.backward(&cache, &Tensor::from_vec(2, 1, 16, 16, d));

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..net.params.len() {
        let keep = net.params[i];
        net.params[i] = keep + h;
        let up = bce_loss(&net.predict(&x).unwrap().data, &labels).unwrap();
        net.params[i] = keep - h;
        let down = bce_loss(&net.predict(&x).unwrap().data, &labels).unwrap();
        net.params[i] = keep;
        let numeric = (up - down) / (2.0 * h);
        // Floor keeps near-zero gradients from dividing rounding noise by itself.
        let scale = grads[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grads[i] - numeric).abs() / scale);
    }
    (worst, net.params.len())
}

#[test]
fn nearest_upsampling_gradients() {
    let (err, n) = check(UpMode::Nearest, 3);
    println!("nearest: {n} parameters, worst relative error {err:.2e}");
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn transposed_upsampling_gradients() {
    let (err, n) = check(UpMode::Transposed, 4);
    println!("transposed: {n} parameters, worst relative error {err:.2e}");
    assert!(err <= 1e-3, "{err}");
}

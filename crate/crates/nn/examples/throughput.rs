//! Rough single-thread GFLOP/s of the convolution layers.
//!
//! cargo run --release -p marsdust-nn --example throughput

use std::time::Instant;

use marsdust_nn::{Conv2d, ConvTranspose2d, Init, Layer, Pass, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn time(label: &str, flops: f64, mut f: impl FnMut()) {
    f();
    let reps = 3;
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    let s = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{label:<28} {:>8.1} ms  {:>6.1} GFLOP/s",
        s * 1e3,
        flops / s / 1e9
    );
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut conv = Conv2d::new(64, 128, 4, 2, 1, false, Init::Normal(0.02), &mut rng);
    let x = Tensor::full(&[1, 64, 128, 128], 0.1);
    let flops = 2.0 * 64.0 * 128.0 * 16.0 * 64.0 * 64.0;
    time("conv 64->128 k4s2 @128", flops, || {
        conv.forward(&x, Pass::TRAIN);
    });
    let g = Tensor::full(&[1, 128, 64, 64], 0.1);
    time("conv backward", 2.0 * flops, || {
        conv.backward(&g);
    });
    let mut deconv = ConvTranspose2d::new(128, 64, 4, 2, 1, false, Init::Normal(0.02), &mut rng);
    time("deconv 128->64 k4s2 @64", flops, || {
        deconv.forward(&g, Pass::TRAIN);
    });
    time("deconv backward", 2.0 * flops, || {
        deconv.backward(&x);
    });
    let mut c3 = Conv2d::new(32, 32, 3, 1, 1, true, Init::GlorotUniform, &mut rng);
    let x3 = Tensor::full(&[8, 32, 100, 100], 0.1);
    let f3 = 8.0 * 2.0 * 32.0 * 288.0 * 10000.0;
    time("conv 32->32 k3 @100 x8", f3, || {
        c3.forward(&x3, Pass::TRAIN);
    });
    time("conv backward", 2.0 * f3, || {
        c3.backward(&x3);
    });
}

//! Finite-difference checks of every layer's backward pass.

use marsdust_nn::{
    Activation, ActivationLayer, BatchNorm2d, Conv2d, ConvTranspose2d, Init, Layer, Linear,
    MaxPool2d, Pass, Sequential, Tensor, Upsample2d,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64) * (*y as f64))
        .sum()
}

/// Checks dL/dx and dL/dparams of L = <layer(x), r> against central differences.
fn check(layer: &mut dyn Layer, x: &Tensor, pass: Pass, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let y = layer.forward(x, pass);
    let r = random(y.shape(), &mut rng);
    marsdust_nn::zero_grad(layer);
    let dx = layer.backward(&r);
    let mut analytic_params = Vec::new();
    layer.visit_params("", &mut |_, p| {
        if p.wants_grad() {
            analytic_params.push(p.grad.clone());
        }
    });

    let h = 1e-2f32;
    let eval = |layer: &mut dyn Layer, x: &Tensor| dot(&layer.forward(x, pass), &r);
    for i in (0..x.len()).step_by((x.len() / 40).max(1)) {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let num = (eval(layer, &xp) - eval(layer, &xm)) / (2.0 * h as f64);
        let ana = dx.data()[i] as f64;
        assert!(
            (num - ana).abs() <= tol * (1.0 + num.abs()),
            "{} dx[{i}]: numeric {num} analytic {ana}",
            layer.kind()
        );
    }

    let mut pidx = 0;
    let mut n_params = 0;
    layer.visit_params("", &mut |_, p| {
        if p.wants_grad() {
            n_params += 1;
        }
    });
    while pidx < n_params {
        let len = analytic_params[pidx].len();
        for j in (0..len).step_by((len / 20).max(1)) {
            let nudge = |layer: &mut dyn Layer, delta: f32| {
                let mut k = 0;
                layer.visit_params("", &mut |_, p| {
                    if p.wants_grad() {
                        if k == pidx {
                            p.value.data_mut()[j] += delta;
                        }
                        k += 1;
                    }
                });
            };
            nudge(layer, h);
            let fp = eval(layer, x);
            nudge(layer, -2.0 * h);
            let fm = eval(layer, x);
            nudge(layer, h);
            let num = (fp - fm) / (2.0 * h as f64);
            let ana = analytic_params[pidx][j] as f64;
            assert!(
                (num - ana).abs() <= tol * (1.0 + num.abs()),
                "{} param {pidx}[{j}]: numeric {num} analytic {ana}",
                layer.kind()
            );
        }
        pidx += 1;
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (3, 1, 0), (1, 1, 0), (7, 2, 3)] {
        let mut conv = Conv2d::new(2, 3, k, s, p, true, Init::GlorotUniform, &mut rng);
        let x = random(&[2, 2, 9, 8], &mut rng);
        check(&mut conv, &x, Pass::TRAIN, 2e-2);
    }
}

#[test]
fn conv_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conv = ConvTranspose2d::new(3, 2, 4, 2, 1, true, Init::GlorotUniform, &mut rng);
    let x = random(&[2, 3, 4, 5], &mut rng);
    assert_eq!(conv.output_shape(x.shape()), vec![2, 2, 8, 10]);
    check(&mut conv, &x, Pass::TRAIN, 2e-2);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // With shared weights, <conv(x), y> == <x, deconv(y)>.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut conv = Conv2d::new(2, 3, 4, 2, 1, false, Init::GlorotUniform, &mut rng);
    let mut deconv = ConvTranspose2d::new(3, 2, 4, 2, 1, false, Init::GlorotUniform, &mut rng);
    // conv weight [out=3, in=2, k, k] has the same memory layout as deconv [in=3, out=2, k, k]
    deconv.weight.value = conv.weight.value.clone();
    let x = random(&[1, 2, 8, 8], &mut rng);
    let y = random(&[1, 3, 4, 4], &mut rng);
    let lhs = dot(&conv.forward(&x, Pass::INFER), &y);
    let rhs = dot(&x, &deconv.forward(&y, Pass::INFER));
    assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
}

#[test]
fn batch_norm_gradients_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bn = BatchNorm2d::new(3, 1e-3, 0.1);
    bn.gamma.value = random(&[3], &mut rng);
    let x = random(&[2, 3, 4, 4], &mut rng);
    check(&mut bn, &x, Pass::TRAIN, 3e-2);
    check(&mut bn, &x, Pass::EVAL, 2e-2);
}

#[test]
fn linear_pool_upsample_activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lin = Linear::new(7, 4, Init::GlorotUniform, &mut rng);
    check(&mut lin, &random(&[3, 7], &mut rng), Pass::TRAIN, 1e-2);

    let mut pool = MaxPool2d::new(2, 2, 0);
    check(
        &mut pool,
        &random(&[1, 2, 6, 6], &mut rng),
        Pass::TRAIN,
        1e-2,
    );
    let mut pool3 = MaxPool2d::new(3, 2, 1);
    check(
        &mut pool3,
        &random(&[1, 2, 7, 7], &mut rng),
        Pass::TRAIN,
        1e-2,
    );

    let mut up = Upsample2d::new(2);
    check(&mut up, &random(&[1, 2, 3, 3], &mut rng), Pass::TRAIN, 1e-2);

    for act in [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::LeakyRelu(0.2),
    ] {
        let mut a = ActivationLayer::new(act);
        check(&mut a, &random(&[2, 10], &mut rng), Pass::TRAIN, 1e-2);
    }
}

#[test]
fn sequential_chain_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = Sequential::new()
        .with(Conv2d::new(
            1,
            4,
            3,
            1,
            1,
            true,
            Init::GlorotUniform,
            &mut rng,
        ))
        .with(ActivationLayer::new(Activation::Tanh))
        .with(ConvTranspose2d::new(
            4,
            2,
            4,
            2,
            1,
            true,
            Init::GlorotUniform,
            &mut rng,
        ))
        .with(ActivationLayer::new(Activation::Sigmoid));
    check(
        &mut net,
        &random(&[2, 1, 5, 5], &mut rng),
        Pass::TRAIN,
        2e-2,
    );
}

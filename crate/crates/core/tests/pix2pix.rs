use marsdust::dataset::{ImagePatch, NormMode, NormalizedImage};
use marsdust::pix2pix::{
    build_discriminator, gan_losses, load_generator, preprocess_pair, restore_images,
    save_generator, train_pix2pix, translate, GanConfig, GanLossRecord, Generator, Pix2Pix,
    Pix2PixMeta, IMAGE_SIZE,
};
use marsdust::synth;
use marsdust_nn::{receptive_field, zero_grad, Layer, Pass, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn small_config() -> GanConfig {
    GanConfig {
        ngf: 4,
        ndf: 4,
        epochs: 2,
        ..Default::default()
    }
}

#[test]
fn generator_shapes() {
    let mut g = Generator::new(1, 4, 0);
    let walk = g.shape_walk(&[1, 1, 256, 256]);
    let down_sides: Vec<usize> = walk[..8].iter().map(|s| s[2]).collect();
    assert_eq!(down_sides, [128, 64, 32, 16, 8, 4, 2, 1]);
    assert_eq!(walk[7], vec![1, 32, 1, 1]);
    assert_eq!(g.down_channels(), &[4, 8, 16, 32, 32, 32, 32, 32]);
    // each up block emits the mirrored width, doubled by the skip concatenation
    let up_channels: Vec<usize> = walk[8..15].iter().map(|s| s[1]).collect();
    assert_eq!(up_channels, [64, 64, 64, 64, 32, 16, 8]);
    assert_eq!(walk[15], vec![1, 1, 256, 256]);

    let y = g.forward(&Tensor::zeros(&[1, 1, 256, 256]), Pass::INFER);
    assert_eq!(y.shape(), &[1, 1, 256, 256]);
    assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn generator_gradient_matches_directional_difference() {
    // running-stat normalisation keeps the network piecewise linear before tanh
    let mut g = Generator::with_norm_stats(1, 2, 7, false);
    let x = random(&[1, 1, 256, 256], 1);
    let y = g.forward(&x, Pass::EVAL);
    let r = random(y.shape(), 2);
    zero_grad(&mut g);
    let dx = g.backward(&r);
    let dot = |a: &Tensor, b: &Tensor| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| *p as f64 * *q as f64)
            .sum::<f64>()
    };
    for seed in 10..13 {
        let d = random(x.shape(), seed);
        let h = 1e-4f32;
        let shifted = |s: f32| {
            let mut xs = x.clone();
            for (v, dv) in xs.data_mut().iter_mut().zip(d.data()) {
                *v += s * dv;
            }
            xs
        };
        let fp = dot(&g.forward(&shifted(h), Pass::INFER), &r);
        let fm = dot(&g.forward(&shifted(-h), Pass::INFER), &r);
        let numeric = (fp - fm) / (2.0 * h as f64);
        let analytic = dot(&dx, &d);
        assert!(
            (numeric - analytic).abs() <= 0.01 * numeric.abs().max(analytic.abs()) + 1e-4,
            "numeric {numeric} analytic {analytic}"
        );
    }
}

#[test]
fn discriminator_patch_map_and_field() {
    let d = build_discriminator(1, 4, 0);
    assert_eq!(d.output_shape(&[1, 2, 256, 256]), vec![1, 1, 30, 30]);
    let trace: Vec<usize> = (1..=5)
        .map(|k| receptive_field(&d.windows()[..k]).0)
        .collect();
    assert_eq!(trace, [4, 10, 22, 46, 70]);
}

#[test]
fn occlusion_outside_field_leaves_logit_unchanged() {
    // logit (i, j) sees input rows/cols 8i - 23 ..= 8i + 46
    let mut d = build_discriminator(1, 4, 3);
    let x = random(&[1, 2, 256, 256], 4);
    let base = d.forward(&x, Pass::INFER);
    let probe = |d: &mut marsdust_nn::Sequential, r: usize, c: usize| {
        let mut xp = x.clone();
        xp.data_mut()[r * 256 + c] += 5.0;
        d.forward(&xp, Pass::INFER)
    };
    let at = |t: &Tensor, i: usize, j: usize| t.data()[i * 30 + j];
    let outside = probe(&mut d, 10, 47);
    assert_eq!(at(&outside, 0, 0), at(&base, 0, 0));
    let inside = probe(&mut d, 10, 46);
    assert_ne!(at(&inside, 0, 0), at(&base, 0, 0));
    let (i, j) = (10usize, 20usize);
    let below = probe(&mut d, 8 * i - 24, 8 * j);
    assert_eq!(at(&below, i, j), at(&base, i, j));
    let edge = probe(&mut d, 8 * i - 23, 8 * j);
    assert_ne!(at(&edge, i, j), at(&base, i, j));
}

fn bce_oracle(logits: &[f32], target: f64) -> f64 {
    logits
        .iter()
        .map(|&x| {
            let x = x as f64;
            let p = 1.0 / (1.0 + (-x).exp());
            -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / logits.len() as f64
}

#[test]
fn losses_at_known_points() {
    let zeros = Tensor::zeros(&[1, 1, 30, 30]);
    let img = random(&[1, 1, 16, 16], 1);
    let r = gan_losses(&zeros, &zeros, &img, &img, 100.0).unwrap();
    assert_eq!(r.gen_l1, 0.0);
    assert!((r.disc_loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
    assert!((r.gen_adversarial - std::f64::consts::LN_2).abs() < 1e-6);
    assert!(gan_losses(&zeros, &Tensor::zeros(&[1, 1, 2, 2]), &img, &img, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn losses_match_scalar_oracle(seed in 0u64..10_000, lambda in 1.0f32..200.0) {
        let real = random(&[1, 1, 6, 6], seed).map(|v| v * 4.0);
        let fake_logits = random(&[1, 1, 6, 6], seed + 1).map(|v| v * 4.0);
        let fake = random(&[1, 1, 8, 8], seed + 2);
        let target = random(&[1, 1, 8, 8], seed + 3);
        let r = gan_losses(&real, &fake_logits, &fake, &target, lambda).unwrap();
        let l1 = fake.data().iter().zip(target.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>() / 64.0;
        let adv = bce_oracle(fake_logits.data(), 1.0);
        let disc = bce_oracle(real.data(), 1.0) + bce_oracle(fake_logits.data(), 0.0);
        prop_assert!((r.gen_l1 - l1).abs() < 1e-6);
        prop_assert!((r.gen_adversarial - adv).abs() < 1e-5 * (1.0 + adv));
        prop_assert!((r.disc_loss - disc).abs() < 1e-5 * (1.0 + disc));
        prop_assert!((r.gen_total - (r.gen_adversarial + lambda as f64 * r.gen_l1)).abs() < 1e-5 * (1.0 + r.gen_total));
    }
}

fn ramp(id: &str, side: usize) -> ImagePatch {
    let px = (0..side * side)
        .map(|i| ((i % side) * 255 / (side - 1)) as u8)
        .collect();
    ImagePatch::new(id, side, side, px).unwrap()
}

#[test]
fn preprocessing_range_and_shapes() {
    let black = ImagePatch::constant("b", 100, 100, 0);
    let white = ImagePatch::constant("w", 100, 100, 255);
    for train in [false, true] {
        let (x, y) = preprocess_pair(&black, &white, train, 5).unwrap();
        assert_eq!(x.shape(), &[1, 1, IMAGE_SIZE, IMAGE_SIZE]);
        assert!(x.data().iter().all(|&v| v == -1.0));
        assert!(y.data().iter().all(|&v| v == 1.0));
    }
    assert!(preprocess_pair(&black, &ImagePatch::constant("s", 50, 50, 0), false, 0).is_err());
}

#[test]
fn jitter_is_shared_and_seeded() {
    let a = ramp("a", 100);
    for seed in 0..8 {
        let (x, y) = preprocess_pair(&a, &a, true, seed).unwrap();
        assert_eq!(
            x, y,
            "identical inputs must receive the identical transform"
        );
        assert_eq!(preprocess_pair(&a, &a, true, seed).unwrap().0, x);
    }
    let distinct: std::collections::HashSet<Vec<u32>> = (0..8)
        .map(|s| {
            preprocess_pair(&a, &a, true, s)
                .unwrap()
                .0
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    assert!(distinct.len() > 1);
    let (e1, _) = preprocess_pair(&a, &a, false, 1).unwrap();
    let (e2, _) = preprocess_pair(&a, &a, false, 2).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn config_validation() {
    assert!(GanConfig::default().validate().is_ok());
    let bad = GanConfig {
        image_size: 128,
        ..Default::default()
    };
    assert!(Pix2Pix::new(bad, 0).is_err());
    let bad = GanConfig {
        lambda_l1: 0.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn short_training_run_writes_checkpoints() {
    let clean = synth::clear_set(3, 100, 100, 2);
    let pairs: Vec<_> = clean.iter().map(|p| (p.clone(), p.clone())).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut model = Pix2Pix::new(small_config(), 1).unwrap();
    let h = train_pix2pix(&mut model, &pairs, 1, Some(dir.path())).unwrap();
    assert_eq!(h.steps.len(), 6);
    assert_eq!(h.epochs.len(), 2);
    assert!(h.steps.iter().all(GanLossRecord::is_finite));
    assert!(dir.path().join("generator_epoch_001.npz").exists());
    assert!(dir.path().join("generator_epoch_002.npz").exists());
    let text = std::fs::read_to_string(dir.path().join("history.json")).unwrap();
    let back: marsdust::pix2pix::GanHistory = serde_json::from_str(&text).unwrap();
    assert_eq!(back, h);
    assert_eq!(h.last_epoch_mean(), GanLossRecord::mean(&h.steps[3..]));
}

#[test]
fn translate_rejects_wrong_shape() {
    let mut g = Generator::new(1, 2, 0);
    assert!(translate(&mut g, &Tensor::zeros(&[1, 1, 128, 128])).is_err());
    assert!(translate(&mut g, &Tensor::zeros(&[1, 2, 256, 256])).is_err());
}

#[test]
fn generator_round_trip_and_restore() {
    let mut g = Generator::new(1, 2, 5);
    let dir = tempfile::tempdir().unwrap();
    save_generator(
        &mut g,
        &Pix2PixMeta::new(
            GanConfig {
                ngf: 2,
                ..Default::default()
            },
            5,
        ),
        dir.path(),
    )
    .unwrap();
    let (mut back, meta) = load_generator(dir.path()).unwrap();
    assert_eq!(meta.config.ngf, 2);
    let x = random(&[1, 1, 256, 256], 8);
    assert_eq!(
        translate(&mut back, &x).unwrap(),
        translate(&mut g, &x).unwrap()
    );

    let img = NormalizedImage::new(1, 100, 100, vec![0.25; 100 * 100], NormMode::Unit).unwrap();
    let out = restore_images(&mut back, &[img]).unwrap();
    assert_eq!((out[0].height, out[0].width), (100, 100));
    assert!(out[0].data.iter().all(|v| (0.0..=1.0).contains(v)));
}

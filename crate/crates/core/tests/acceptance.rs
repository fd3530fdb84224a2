//! Acceptance criteria 1-10. Each test prints one `criterion N ... PASS|FAIL`
//! line. Criteria 3 and 4 read the labelled dataset from `MARSDUST_DATA_DIR`
//! (a folder holding `manifest.csv` and the patches it lists) and fail when
//! it is not configured. Full-scale anchors are `#[ignore]`d.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use marsdust::autoencoder::{
    denoise, noise_sweep, train_denoiser, AeTrainConfig, AeVariant, Autoencoder, SweepPoint,
};
use marsdust::classifiers::resnet::ResNet50;
use marsdust::classifiers::{
    build_cnn, evaluate, parameter_map, train_classifier, ContrastStub, HeadConfig, InputSpec,
    NetClassifier, PcaSvmClassifier, SvmConfig, TrainHyperparams, TrainedClassifier, TransferModel,
};
use marsdust::dataset::{
    compute_stats, load_manifest, load_patch, prepare_split, resize, save_patch, ImagePatch, Label,
    NormalizedImage, ResizeMethod, Split,
};
use marsdust::metrics::{mae, psnr, ssim, MetricParams, Plane, SsimParams};
use marsdust::noise::{add_dust_noise, histogram, make_noisy_dataset, NoiseSpec};
use marsdust::pipeline::{read_archive, run_filter, FilterOptions, PATCH_SIDE};
use marsdust::pix2pix::{
    build_discriminator, gan_losses, restore_images, train_pix2pix, GanConfig, Generator, Pix2Pix,
};
use marsdust::synth;
use marsdust_nn::{load_named, receptive_field, snapshot, Layer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATA_ENV: &str = "MARSDUST_DATA_DIR";

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} {name}: {detail}");
}

fn data_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os(DATA_ENV)?);
    dir.join("manifest.csv").is_file().then_some(dir)
}

fn missing_data(n: u32, name: &str) {
    report(
        n,
        name,
        false,
        &format!("{DATA_ENV} is not set to a folder containing manifest.csv"),
    );
}

// --- 1 ---------------------------------------------------------------------

fn ssim_double_loop(x: &[f64], y: &[f64], side: usize) -> f64 {
    let (k, sigma, c) = (11usize, 1.5f64, 5.0f64);
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            win[i * k + j] =
                (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let positions = side - k + 1;
    for r in 0..positions {
        for s in 0..positions {
            let mut m = [0.0f64; 5];
            for i in 0..k {
                for j in 0..k {
                    let wt = win[i * k + j] / total;
                    let (a, b) = (x[(r + i) * side + s + j], y[(r + i) * side + s + j]);
                    m[0] += wt * a;
                    m[1] += wt * b;
                    m[2] += wt * a * a;
                    m[3] += wt * b * b;
                    m[4] += wt * a * b;
                }
            }
            let (vx, vy, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
            acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2)
                / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
        }
    }
    acc / (positions * positions) as f64
}

#[test]
fn criterion_01_metrics_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = SsimParams::default();
    let mut plane = |n: usize| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<f64>>();
    let x = plane(64 * 64);
    let p = Plane::new(&x, 64, 64);
    let self_ssim = (ssim(p, p, &params).unwrap() - 1.0).abs();
    let self_mae = mae(p, p).unwrap();
    let (a, b) = (vec![0.5f64; 100], vec![0.6f64; 100]);
    let psnr_err =
        (psnr(Plane::new(&a, 10, 10), Plane::new(&b, 10, 10), 1.0).unwrap() - 20.0).abs();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (u, v) = (plane(256), plane(256));
        let got = ssim(Plane::new(&u, 16, 16), Plane::new(&v, 16, 16), &params).unwrap();
        worst = worst.max((got - ssim_double_loop(&u, &v, 16)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = self_ssim < 1e-9 && self_mae == 0.0 && psnr_err < 1e-9 && worst < 1e-6 && secs < 60.0;
    report(
        1,
        "metrics correctness",
        ok,
        &format!("|ssim(x,x)-1| {self_ssim:.1e}, mae(x,x) {self_mae}, psnr error {psnr_err:.1e} dB, max oracle gap {worst:.1e}, {secs:.1}s"),
    );
}

// --- 2 ---------------------------------------------------------------------

#[test]
fn criterion_02_noise_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clean = ImagePatch::constant("zero", 100, 100, 0);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let total = rng.random_range(1..=10_000usize);
        let n_low = rng.random_range(0..=total);
        let spec = NoiseSpec::new(n_low, total - n_low, rng.random());
        let noisy = add_dust_noise(&clean, &spec).unwrap();
        let values: Vec<u8> = noisy.pixels.iter().copied().filter(|&v| v != 0).collect();
        if values.len() != total {
            failures.push(format!(
                "case {case}: {} positions for {total}",
                values.len()
            ));
        }
        if values.iter().any(|v| !(70..=220).contains(v)) {
            failures.push(format!("case {case}: value outside [70, 220]"));
        }
        if add_dust_noise(&clean, &spec).unwrap() != noisy {
            failures.push(format!("case {case}: not deterministic"));
        }
        let p = n_low as f64 / total as f64;
        let observed = values.iter().filter(|&&v| v < 145).count() as f64 / total as f64;
        let bound = 3.0 * (p * (1.0 - p) / total as f64).sqrt();
        if (observed - p).abs() > bound + 1e-12 {
            failures.push(format!(
                "case {case}: low share {observed} vs {p} +- {bound}"
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 120.0;
    let detail = if failures.is_empty() {
        format!("1000 specs, {secs:.1}s")
    } else {
        format!("{} violations, first: {}", failures.len(), failures[0])
    };
    report(2, "noise-model properties", ok, &detail);
}

// --- 3 ---------------------------------------------------------------------

#[test]
fn criterion_03_histogram_anchor() {
    let name = "histogram peaks of dusty training split";
    let Some(dir) = data_dir() else {
        return missing_data(3, name);
    };
    let manifest = load_manifest(&dir.join("manifest.csv")).unwrap();
    let dusty: Vec<ImagePatch> = prepare_split(&manifest, Split::Train, 0)
        .unwrap()
        .into_iter()
        .filter(|(_, y)| *y == Label::Dusty.code())
        .map(|(p, _)| p)
        .collect();
    let h = histogram(&dusty).unwrap();
    let anchors = [90usize, 135, 190];
    let ok = anchors
        .iter()
        .all(|&a| h.peaks.iter().any(|&p| p.abs_diff(a) <= 10));
    report(
        3,
        name,
        ok,
        &format!("peaks {:?}, anchors {anchors:?} +- 10", h.peaks),
    );
}

// --- 4 ---------------------------------------------------------------------

#[test]
fn criterion_04_pca_svm_baseline() {
    let name = "PCA+SVM test accuracy";
    let Some(dir) = data_dir() else {
        return missing_data(4, name);
    };
    let manifest = load_manifest(&dir.join("manifest.csv")).unwrap();
    let train = prepare_split(&manifest, Split::Train, 0).unwrap();
    let test = prepare_split(&manifest, Split::Test, 0).unwrap();
    let clf = PcaSvmClassifier::fit(&train, 10, None, &SvmConfig::default()).unwrap();
    let kept = clf.n_components;
    let mut model = TrainedClassifier::PcaSvm(clf);
    let refs: Vec<&ImagePatch> = test.iter().map(|(p, _)| p).collect();
    let truth: Vec<u8> = test.iter().map(|(_, y)| *y).collect();
    let acc = evaluate(&model.predict(&refs).unwrap(), &truth)
        .unwrap()
        .accuracy
        * 100.0;
    let ok = (acc - 61.96).abs() <= 3.0;
    report(
        4,
        name,
        ok,
        &format!("{acc:.2}% with {kept} components, target 61.96 +- 3"),
    );
}

// --- 5 ---------------------------------------------------------------------

#[test]
fn criterion_05_cnn_overfit() {
    let start = Instant::now();
    let data = synth::labeled_set(64, 64, 64, 5);
    let mut model = NetClassifier::new(InputSpec::cnn(), Box::new(build_cnn(5)));
    let hyper = TrainHyperparams {
        epochs: 50,
        batch_size: 16,
        ..TrainHyperparams::default()
    };
    let history = train_classifier(&mut model, &data, &[], &hyper, 5).unwrap();
    let reached = history
        .epochs
        .iter()
        .find(|e| e.train_accuracy >= 0.95)
        .map(|e| e.epoch);
    let secs = start.elapsed().as_secs_f64();
    let ok = reached.is_some() && secs < 600.0;
    let best = history
        .epochs
        .iter()
        .map(|e| e.train_accuracy)
        .fold(0.0, f64::max);
    report(
        5,
        "CNN overfits 64 images",
        ok,
        &format!("first epoch >= 95%: {reached:?}, best train accuracy {best:.3}, {secs:.0}s"),
    );
}

// --- 6 ---------------------------------------------------------------------

#[test]
fn criterion_06_frozen_backbone() {
    let start = Instant::now();
    let backbone = match std::env::var_os(marsdust::classifiers::net::WEIGHTS_ENV) {
        Some(p) => marsdust::classifiers::net::load_resnet50(Path::new(&p)).unwrap(),
        None => ResNet50::new(&mut ChaCha8Rng::seed_from_u64(6)),
    };
    let mut model = TransferModel::new(backbone, &HeadConfig::default(), 6);
    let before = parameter_map(&mut model.backbone, "");
    let data = synth::labeled_set(8, 100, 100, 6);
    let stats = compute_stats(&data.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>()).unwrap();
    let mut clf = NetClassifier::new(InputSpec::transfer(stats), Box::new(model));
    let hyper = TrainHyperparams {
        epochs: 2,
        batch_size: 4,
        ..TrainHyperparams::default()
    };
    train_classifier(&mut clf, &data, &[], &hyper, 6).unwrap();
    let after = parameter_map(clf.net.as_mut(), "");
    let linf = before
        .iter()
        .flat_map(|(name, t)| {
            t.data()
                .iter()
                .zip(after[&format!("backbone.{name}")].data())
                .map(|(a, b)| (a - b).abs())
        })
        .fold(0.0f32, f32::max);
    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        "frozen backbone unchanged by 2-epoch run",
        linf == 0.0 && secs < 900.0,
        &format!(
            "L-inf backbone change {linf}, {} tensors, {secs:.0}s",
            before.len()
        ),
    );
}

// --- 7 & 9 shared desk-scale autoencoder -----------------------------------

const AE_VARIANT: AeVariant = AeVariant::Down64;
const AE_WIDTH: usize = 8;
const AE_PAIRS: usize = 2000;
const AE_EPOCHS: usize = 20;
const HELD_OUT: usize = 100;
const LOW_FRACTION: f64 = 0.5;

fn held_out() -> Vec<ImagePatch> {
    synth::clear_set(HELD_OUT, 100, 100, 7_000)
}

/// Weights of an autoencoder trained once on 0.3-level noise, shared by
/// criteria 7 and 9.
fn trained_ae() -> &'static Vec<(String, Tensor)> {
    static WEIGHTS: OnceLock<Vec<(String, Tensor)>> = OnceLock::new();
    WEIGHTS.get_or_init(|| {
        let clean = synth::clear_set(AE_PAIRS, 100, 100, 70);
        let pairs: Vec<_> = make_noisy_dataset(&clean, 0.3, LOW_FRACTION, 71)
            .unwrap()
            .into_iter()
            .map(|p| (p.noisy, p.clean))
            .collect();
        let mut model = Autoencoder::new(AE_VARIANT, AE_WIDTH, 7).unwrap();
        let cfg = AeTrainConfig {
            epochs: AE_EPOCHS,
            ..AeTrainConfig::default()
        };
        train_denoiser(&mut model, &pairs, &cfg, 7).unwrap();
        snapshot(&mut model, "")
    })
}

fn load_ae() -> Autoencoder {
    let map: HashMap<String, Tensor> = trained_ae().iter().cloned().collect();
    let mut model = Autoencoder::new(AE_VARIANT, AE_WIDTH, 0).unwrap();
    load_named(&mut model, "", &|n| map.get(n).cloned()).unwrap();
    model
}

/// Restore at the model's side, then score at the native 100 x 100.
fn ae_restore(
    model: &mut Autoencoder,
    noisy: &[NormalizedImage],
) -> marsdust::Result<Vec<NormalizedImage>> {
    let side = AE_VARIANT.input_side();
    let small = noisy
        .iter()
        .map(|i| resize(i, (side, side), ResizeMethod::Bilinear))
        .collect::<marsdust::Result<Vec<_>>>()?;
    denoise(model, &small)?
        .iter()
        .map(|i| resize(i, (100, 100), ResizeMethod::Bilinear))
        .collect()
}

fn ae_sweep(levels: &[f64]) -> Vec<SweepPoint> {
    let mut model = load_ae();
    noise_sweep(
        |x| ae_restore(&mut model, x),
        &held_out(),
        100,
        levels,
        LOW_FRACTION,
        99,
        &MetricParams::default(),
    )
    .unwrap()
}

#[test]
fn criterion_07_autoencoder_study() {
    let start = Instant::now();
    let expected = [
        (AeVariant::Base100, 625),
        (AeVariant::Down64, 64),
        (AeVariant::Up128Z256, 256),
        (AeVariant::Up128Z1024, 1024),
    ];
    let mut sizes = Vec::new();
    for (v, _) in expected {
        let m = Autoencoder::new(v, 8, 0).unwrap();
        let walk = m.shape_walk();
        let io_ok = walk.last().unwrap().1 == vec![1, 1, v.input_side(), v.input_side()];
        sizes.push((
            m.bottleneck_shape().iter().skip(1).product::<usize>(),
            io_ok,
        ));
    }
    let shapes_ok = sizes
        .iter()
        .zip(expected)
        .all(|((z, io), (_, want))| *z == want && *io);
    let point = &ae_sweep(&[0.3])[0];
    let (restored, noisy) = (point.restored.mean_ssim, point.noisy.mean_ssim);
    let ok = shapes_ok && restored > noisy;
    report(
        7,
        "autoencoder bottlenecks and desk denoising",
        ok,
        &format!(
            "bottlenecks {:?}; {AE_VARIANT} width {AE_WIDTH}, {AE_PAIRS} pairs x {AE_EPOCHS} epochs: SSIM restored {restored:.4} vs noisy {noisy:.4} at 0.3, {:.0}s",
            sizes.iter().map(|s| s.0).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    );
}

// --- 8 ---------------------------------------------------------------------

#[test]
fn criterion_08_pix2pix_structure() {
    let start = Instant::now();
    let d = build_discriminator(1, 64, 0);
    let map = d.output_shape(&[1, 2, 256, 256]);
    let (rf, _) = receptive_field(&d.windows());
    let g = Generator::new(1, 64, 0);
    let out = g.output_shape(&[1, 1, 256, 256]);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut random = |shape: &[usize], scale: f32| {
        let n = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
        )
    };
    let mut identity_gap = 0.0f64;
    for _ in 0..20 {
        let r = gan_losses(
            &random(&[1, 1, 30, 30], 5.0),
            &random(&[1, 1, 30, 30], 5.0),
            &random(&[1, 1, 64, 64], 1.0),
            &random(&[1, 1, 64, 64], 1.0),
            100.0,
        )
        .unwrap();
        identity_gap =
            identity_gap.max((r.gen_total - (r.gen_adversarial + 100.0 * r.gen_l1)).abs());
    }

    let clean = synth::clear_set(200, 100, 100, 80);
    let pairs: Vec<_> = make_noisy_dataset(&clean, 0.5, LOW_FRACTION, 81)
        .unwrap()
        .into_iter()
        .map(|p| (p.noisy, p.clean))
        .collect();
    let cfg = GanConfig {
        ngf: 8,
        ndf: 8,
        epochs: 2,
        ..GanConfig::default()
    };
    let mut model = Pix2Pix::new(cfg, 8).unwrap();
    let history = train_pix2pix(&mut model, &pairs, 8, None).unwrap();
    let (l1_1, l1_2) = (history.epochs[0].mean.gen_l1, history.epochs[1].mean.gen_l1);
    let ok = map == vec![1, 1, 30, 30]
        && rf == 70
        && out == vec![1, 1, 256, 256]
        && identity_gap < 1e-5
        && l1_2 < l1_1;
    report(
        8,
        "pix2pix structure and smoke run",
        ok,
        &format!(
            "logit map {map:?}, rf {rf}, identity gap {identity_gap:.1e}, gen_l1 epoch means {l1_1:.4} -> {l1_2:.4}, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// --- 9 ---------------------------------------------------------------------

const GAN_PAIRS: usize = 500;

#[test]
fn criterion_09_noise_robustness_ordering() {
    let start = Instant::now();
    let ae = ae_sweep(&[0.3, 0.7]);
    let clean = synth::clear_set(GAN_PAIRS, 100, 100, 90);
    let pairs: Vec<_> = make_noisy_dataset(&clean, 0.7, LOW_FRACTION, 91)
        .unwrap()
        .into_iter()
        .map(|p| (p.noisy, p.clean))
        .collect();
    let cfg = GanConfig {
        ngf: 8,
        ndf: 8,
        epochs: 1,
        ..GanConfig::default()
    };
    let mut gan = Pix2Pix::new(cfg, 9).unwrap();
    train_pix2pix(&mut gan, &pairs, 9, None).unwrap();
    let gan_point = noise_sweep(
        |x| restore_images(&mut gan.generator, x),
        &held_out(),
        100,
        &[0.7],
        LOW_FRACTION,
        99,
        &MetricParams::default(),
    )
    .unwrap();
    let (ae3, ae7, g7) = (
        ae[0].restored.mean_ssim,
        ae[1].restored.mean_ssim,
        gan_point[0].restored.mean_ssim,
    );
    report(
        9,
        "noise-robustness ordering",
        g7 > ae7 && ae7 < ae3,
        &format!(
            "SSIM at 0.7: pix2pix {g7:.4} vs AE {ae7:.4}; AE at 0.3 {ae3:.4}; pix2pix {GAN_PAIRS} pairs x 1 epoch, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// --- 10 --------------------------------------------------------------------

#[test]
fn criterion_10_pipeline_conservation() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("patches");
    std::fs::create_dir(&input).unwrap();
    for (p, _) in synth::labeled_set(50, PATCH_SIDE, PATCH_SIDE, 10) {
        save_patch(&p, &input.join(format!("{}.png", p.id))).unwrap();
    }
    let out = dir.path().join("archive.npz");
    let opts = FilterOptions {
        batch: 16,
        created_at: Some(0),
    };
    let mut stub = TrainedClassifier::Stub(ContrastStub::default());
    let manifest = run_filter(&input, &mut stub, "stub", &out, &opts).unwrap();
    let archive = read_archive(&out).unwrap();
    let counts_ok = manifest.n_dusty + manifest.n_not_dusty == 50 && manifest.n_skipped == 0;

    let mut bit_exact = true;
    for (label, names) in [
        (Label::Dusty, &archive.dusty_names),
        (Label::NotDusty, &archive.not_dusty_names),
    ] {
        for (i, name) in names.iter().enumerate() {
            bit_exact &= archive.patch(label, i).unwrap().pixels
                == load_patch(&input.join(name)).unwrap().pixels;
        }
    }
    let rewritten = dir.path().join("again.npz");
    archive.write(&rewritten).unwrap();
    bit_exact &= std::fs::read(&rewritten).unwrap() == std::fs::read(&out).unwrap();

    let mut direct = TrainedClassifier::Stub(ContrastStub::default());
    let mut agree = 0;
    for r in &archive.manifest.records {
        let p = load_patch(&input.join(&r.filename)).unwrap();
        agree += usize::from(direct.predict(&[&p]).unwrap()[0] == r.label.code());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        10,
        "pipeline conservation",
        counts_ok && bit_exact && agree == 50 && secs < 60.0,
        &format!(
            "{} dusty + {} not dusty of 50, bit-exact {bit_exact}, {agree}/50 match direct predictions, {secs:.1}s",
            manifest.n_dusty, manifest.n_not_dusty
        ),
    );
}

// --- optional full-scale anchors ---------------------------------------------

fn full_split(split: Split) -> Vec<(ImagePatch, u8)> {
    let dir = data_dir().unwrap_or_else(|| panic!("{DATA_ENV} must point at the dataset"));
    prepare_split(&load_manifest(&dir.join("manifest.csv")).unwrap(), split, 0).unwrap()
}

fn net_test_accuracy(model: &mut NetClassifier, test: &[(ImagePatch, u8)]) -> f64 {
    let refs: Vec<&ImagePatch> = test.iter().map(|(p, _)| p).collect();
    let probs = model.class_probabilities(&refs).unwrap();
    let pred: Vec<u8> = probs.iter().map(|p| u8::from(p[1] >= 0.5)).collect();
    let truth: Vec<u8> = test.iter().map(|(_, y)| *y).collect();
    evaluate(&pred, &truth).unwrap().accuracy * 100.0
}

#[test]
#[ignore = "full dataset run, about an hour"]
fn full_cnn_test_accuracy() {
    let (train, val, test) = (
        full_split(Split::Train),
        full_split(Split::Val),
        full_split(Split::Test),
    );
    let mut model = NetClassifier::new(InputSpec::cnn(), Box::new(build_cnn(0)));
    train_classifier(&mut model, &train, &val, &TrainHyperparams::default(), 0).unwrap();
    let acc = net_test_accuracy(&mut model, &test);
    report(
        5,
        "full CNN test accuracy",
        (acc - 89.74).abs() <= 3.0,
        &format!("{acc:.2}%, target 89.74 +- 3"),
    );
}

#[test]
#[ignore = "full dataset run with pretrained weights, hours"]
fn full_transfer_test_accuracy() {
    let (train, val, test) = (
        full_split(Split::Train),
        full_split(Split::Val),
        full_split(Split::Test),
    );
    let stats = compute_stats(&train.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>()).unwrap();
    let model =
        marsdust::classifiers::build_transfer_model(None, &HeadConfig::default(), 0).unwrap();
    let mut clf = NetClassifier::new(InputSpec::transfer(stats), Box::new(model));
    train_classifier(&mut clf, &train, &val, &TrainHyperparams::default(), 0).unwrap();
    let acc = net_test_accuracy(&mut clf, &test);
    report(
        6,
        "full transfer test accuracy",
        (acc - 94.05).abs() <= 2.0,
        &format!("{acc:.2}%, target 94.05 +- 2"),
    );
}

fn full_clean_patches() -> Vec<ImagePatch> {
    full_split(Split::Train)
        .into_iter()
        .filter(|(_, y)| *y == Label::NotDusty.code())
        .map(|(p, _)| p)
        .collect()
}

#[test]
#[ignore = "full autoencoder run, hours"]
fn full_autoencoder_row() {
    let clean = full_clean_patches();
    let (train, test) = clean.split_at(clean.len() * 9 / 10);
    let pairs: Vec<_> = make_noisy_dataset(train, 0.5, LOW_FRACTION, 1)
        .unwrap()
        .into_iter()
        .map(|p| (p.noisy, p.clean))
        .collect();
    let mut model =
        Autoencoder::new(AeVariant::Base100, marsdust::autoencoder::DEFAULT_WIDTH, 0).unwrap();
    train_denoiser(&mut model, &pairs, &AeTrainConfig::default(), 0).unwrap();
    let r = &noise_sweep(
        |x| denoise(&mut model, x),
        test,
        100,
        &[0.5],
        LOW_FRACTION,
        2,
        &MetricParams::default(),
    )
    .unwrap()[0]
        .restored;
    let psnr = r.mean_psnr.unwrap_or(f64::INFINITY);
    let ok = (r.mean_mae - 0.0228).abs() <= 0.005
        && (r.mean_ssim - 0.757).abs() <= 0.05
        && (psnr - 31.5).abs() <= 1.5
        && (r.mean_msssim - 0.921).abs() <= 0.03;
    report(
        7,
        "full autoencoder row",
        ok,
        &format!(
            "MAE {:.4} SSIM {:.3} PSNR {psnr:.2} MS-SSIM {:.3}",
            r.mean_mae, r.mean_ssim, r.mean_msssim
        ),
    );
}

#[test]
#[ignore = "full pix2pix run, hours"]
fn full_pix2pix_anchors() {
    let clean = full_clean_patches();
    let (train, test) = clean.split_at(clean.len() * 9 / 10);
    let pairs: Vec<_> = make_noisy_dataset(train, 0.5, LOW_FRACTION, 1)
        .unwrap()
        .into_iter()
        .map(|p| (p.noisy, p.clean))
        .collect();
    let mut gan = Pix2Pix::new(GanConfig::default(), 0).unwrap();
    let history = train_pix2pix(&mut gan, &pairs, 0, None).unwrap();
    let last = history.last_epoch_mean().unwrap();
    let ssim = noise_sweep(
        |x| restore_images(&mut gan.generator, x),
        test,
        100,
        &[0.5],
        LOW_FRACTION,
        2,
        &MetricParams::default(),
    )
    .unwrap()[0]
        .restored
        .mean_ssim;
    let ok = last.disc_loss < std::f64::consts::LN_2 && (ssim - 0.9999).abs() <= 0.01;
    report(
        8,
        "full pix2pix anchors",
        ok,
        &format!(
            "last-epoch disc {:.3} gen {:.3}, SSIM {ssim:.4}",
            last.disc_loss, last.gen_total
        ),
    );
}

//! Convolutional autoencoders for reconstruction and denoising, in four
//! input/bottleneck variants.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use marsdust_nn::loss::{bce_with_logits, mse};
use marsdust_nn::{
    sigmoid, Activation, ActivationLayer, Adam, Conv2d, Init, Layer, MaxPool2d, Param, Pass,
    Sequential, Tensor, Upsample2d,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, resize, ImagePatch, NormMode, NormalizedImage, ResizeMethod};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_denoiser, MetricParams, MetricReport};
use crate::noise::{derive_seed, make_noisy_dataset};
use crate::npz::NpzArchive;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeVariant {
    Base100,
    Down64,
    Up128Z256,
    Up128Z1024,
}

impl AeVariant {
    pub const ALL: [AeVariant; 4] = [
        AeVariant::Base100,
        AeVariant::Down64,
        AeVariant::Up128Z256,
        AeVariant::Up128Z1024,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AeVariant::Base100 => "base100",
            AeVariant::Down64 => "down64",
            AeVariant::Up128Z256 => "up128_z256",
            AeVariant::Up128Z1024 => "up128_z1024",
        }
    }

    pub fn input_side(self) -> usize {
        match self {
            AeVariant::Base100 => 100,
            AeVariant::Down64 => 64,
            AeVariant::Up128Z256 | AeVariant::Up128Z1024 => 128,
        }
    }

    pub fn bottleneck_side(self) -> usize {
        match self {
            AeVariant::Base100 => 25,
            AeVariant::Down64 => 8,
            AeVariant::Up128Z256 => 16,
            AeVariant::Up128Z1024 => 32,
        }
    }

    /// Number of conv + pool stages, one per halving.
    pub fn stages(self) -> usize {
        (self.input_side() / self.bottleneck_side()).trailing_zeros() as usize
    }

    pub fn bottleneck_size(self) -> usize {
        self.bottleneck_side() * self.bottleneck_side()
    }
}

impl fmt::Display for AeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AeVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown autoencoder variant `{s}` (expected base100, down64, up128_z256 or up128_z1024)"
                ))
            })
    }
}

/// Default number of filters in the first encoder stage.
pub const DEFAULT_WIDTH: usize = 32;

/// Encoder/decoder pair. `forward` yields logits; [`Autoencoder::reconstruct`]
/// applies the output sigmoid.
pub struct Autoencoder {
    pub variant: AeVariant,
    pub width: usize,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

fn conv(cin: usize, cout: usize, init: Init, rng: &mut ChaCha8Rng) -> Conv2d {
    Conv2d::new(cin, cout, 3, 1, 1, true, init, rng)
}

fn relu() -> ActivationLayer {
    ActivationLayer::new(Activation::Relu)
}

impl Autoencoder {
    /// First stage uses `width` filters, later stages `width / 2`; the last
    /// encoder conv maps to the single-channel bottleneck.
    pub fn new(variant: AeVariant, width: usize, seed: u64) -> Result<Self> {
        if width < 2 {
            return Err(Error::invalid(format!(
                "autoencoder width must be at least 2, got {width}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = width / 2;
        let stages = variant.stages();
        let mut encoder = Sequential::new();
        let mut ch = 1;
        for s in 0..stages {
            if s == 0 {
                encoder
                    .push(conv(ch, width, Init::HeNormal, &mut rng))
                    .push(relu());
                encoder
                    .push(conv(width, width, Init::HeNormal, &mut rng))
                    .push(relu());
                ch = width;
            } else {
                encoder
                    .push(conv(ch, half, Init::HeNormal, &mut rng))
                    .push(relu());
                ch = half;
            }
            if s == stages - 1 {
                // linear bottleneck: a single ReLU channel can die outright
                encoder.push(conv(ch, 1, Init::GlorotUniform, &mut rng));
                ch = 1;
            }
            encoder.push(MaxPool2d::new(2, 2, 0));
        }
        let mut decoder = Sequential::new();
        for s in (0..stages).rev() {
            decoder.push(Upsample2d::new(2));
            if s == 0 {
                decoder
                    .push(conv(ch, width, Init::HeNormal, &mut rng))
                    .push(relu());
                decoder
                    .push(conv(width, width, Init::HeNormal, &mut rng))
                    .push(relu());
                ch = width;
            } else {
                decoder
                    .push(conv(ch, half, Init::HeNormal, &mut rng))
                    .push(relu());
                ch = half;
            }
        }
        decoder.push(conv(ch, 1, Init::GlorotUniform, &mut rng));
        Ok(Self {
            variant,
            width,
            encoder,
            decoder,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.variant.input_side();
        [1, s, s]
    }

    /// Shapes after every encoder then decoder layer for one image.
    pub fn shape_walk(&self) -> Vec<(&'static str, Vec<usize>)> {
        let input: Vec<usize> = std::iter::once(1).chain(self.input_shape()).collect();
        let mut walk = self.encoder.shape_walk(&input);
        let z = walk.last().map(|(_, s)| s.clone()).unwrap_or(input);
        walk.extend(self.decoder.shape_walk(&z));
        walk
    }

    pub fn bottleneck_shape(&self) -> Vec<usize> {
        let input: Vec<usize> = std::iter::once(1).chain(self.input_shape()).collect();
        self.encoder.output_shape(&input)
    }

    pub fn encode(&mut self, x: &Tensor) -> Tensor {
        self.encoder.forward(x, Pass::INFER)
    }

    /// Outputs in [0, 1].
    pub fn reconstruct(&mut self, x: &Tensor) -> Tensor {
        self.forward(x, Pass::INFER).map(sigmoid)
    }
}

impl Layer for Autoencoder {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let z = self.encoder.forward(x, pass);
        self.decoder.forward(&z, pass)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let g = self.decoder.backward(grad_out);
        self.encoder.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder
            .visit_params(&marsdust_nn::layer::join(prefix, "encoder"), f);
        self.decoder
            .visit_params(&marsdust_nn::layer::join(prefix, "decoder"), f);
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        self.decoder.output_shape(&self.encoder.output_shape(input))
    }

    fn kind(&self) -> &'static str {
        "autoencoder"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeLoss {
    /// Per-pixel binary cross-entropy on the sigmoid output.
    Bce,
    Mse,
}

impl FromStr for AeLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(AeLoss::Bce),
            "mse" => Ok(AeLoss::Mse),
            _ => Err(Error::invalid(format!(
                "unknown loss `{s}` (expected bce or mse)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub loss: AeLoss,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 3e-4,
            loss: AeLoss::Bce,
        }
    }
}

impl AeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AeHistory {
    pub epochs: Vec<AeEpoch>,
}

impl AeHistory {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Unit-range single-channel image resized to `side x side`.
pub fn to_model_input(patch: &ImagePatch, side: usize) -> Result<NormalizedImage> {
    let unit = normalize(patch, NormMode::Unit, None)?;
    if patch.dims() == (side, side) {
        return Ok(unit);
    }
    resize(&unit, (side, side), ResizeMethod::Bilinear)
}

fn batch_tensor(images: &[&NormalizedImage]) -> Tensor {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let data: Vec<f32> = images.iter().flat_map(|i| i.data.iter().copied()).collect();
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}

fn loss_and_grad(loss: AeLoss, logits: &Tensor, target: &Tensor) -> (f32, Tensor) {
    match loss {
        AeLoss::Bce => bce_with_logits(logits, target),
        AeLoss::Mse => {
            let y = logits.map(sigmoid);
            let (l, mut g) = mse(&y, target);
            for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                *gv *= yv * (1.0 - yv);
            }
            (l, g)
        }
    }
}

fn check_images(model: &Autoencoder, images: &[NormalizedImage], what: &str) -> Result<()> {
    let [c, h, w] = model.input_shape();
    for (i, img) in images.iter().enumerate() {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::shape(format!(
                "{what} image {i} is {}x{}x{}, model expects {c}x{h}x{w}",
                img.channels, img.height, img.width
            )));
        }
    }
    Ok(())
}

/// Mean loss of the model on `(input, target)` pairs without updating it.
pub fn evaluate_loss(
    model: &mut Autoencoder,
    inputs: &[NormalizedImage],
    targets: &[NormalizedImage],
    config: &AeTrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (xs, ys) in inputs
        .chunks(config.batch_size)
        .zip(targets.chunks(config.batch_size))
    {
        let x = batch_tensor(&xs.iter().collect::<Vec<_>>());
        let y = batch_tensor(&ys.iter().collect::<Vec<_>>());
        let (l, _) = loss_and_grad(config.loss, &model.forward(&x, Pass::INFER), &y);
        total += l as f64 * xs.len() as f64;
    }
    Ok(total / inputs.len().max(1) as f64)
}

/// Train on `(input, target)` image pairs already at the model's input size.
pub fn fit(
    model: &mut Autoencoder,
    inputs: &[NormalizedImage],
    targets: &[NormalizedImage],
    validation: Option<(&[NormalizedImage], &[NormalizedImage])>,
    config: &AeTrainConfig,
    seed: u64,
) -> Result<AeHistory> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::invalid("no training images"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    check_images(model, inputs, "input")?;
    check_images(model, targets, "target")?;
    if let Some((vx, vy)) = validation {
        if vx.len() != vy.len() {
            return Err(Error::shape(
                "validation inputs and targets differ in count",
            ));
        }
        check_images(model, vx, "validation input")?;
        check_images(model, vy, "validation target")?;
    }
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = AeHistory::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = batch_tensor(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>());
            let y = batch_tensor(&batch.iter().map(|&i| &targets[i]).collect::<Vec<_>>());
            let logits = model.forward(&x, Pass::TRAIN);
            let (loss, grad) = loss_and_grad(config.loss, &logits, &y);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite autoencoder loss at epoch {epoch}"
                )));
            }
            model.backward(&grad);
            opt.step(model);
            total += loss as f64 * batch.len() as f64;
        }
        let val_loss = match validation {
            Some((vx, vy)) if !vx.is_empty() => Some(evaluate_loss(model, vx, vy, config)?),
            _ => None,
        };
        let record = AeEpoch {
            epoch,
            loss: total / inputs.len() as f64,
            val_loss,
        };
        log::info!(
            "ae epoch {epoch}: loss {:.5} val {:?}",
            record.loss,
            record.val_loss
        );
        history.epochs.push(record);
    }
    Ok(history)
}

/// Identity training on clean images.
pub fn train_reconstruction(
    model: &mut Autoencoder,
    clean: &[ImagePatch],
    config: &AeTrainConfig,
    seed: u64,
) -> Result<AeHistory> {
    let side = model.variant.input_side();
    let images = clean
        .iter()
        .map(|p| to_model_input(p, side))
        .collect::<Result<Vec<_>>>()?;
    fit(model, &images, &images, None, config, seed)
}

/// Noisy-to-clean training on `(noisy, clean)` patch pairs.
pub fn train_denoiser(
    model: &mut Autoencoder,
    pairs: &[(ImagePatch, ImagePatch)],
    config: &AeTrainConfig,
    seed: u64,
) -> Result<AeHistory> {
    let side = model.variant.input_side();
    let mut inputs = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for (noisy, clean) in pairs {
        if noisy.dims() != clean.dims() {
            return Err(Error::shape(format!(
                "pair {} / {} differ in size: {:?} vs {:?}",
                noisy.id,
                clean.id,
                noisy.dims(),
                clean.dims()
            )));
        }
        inputs.push(to_model_input(noisy, side)?);
        targets.push(to_model_input(clean, side)?);
    }
    fit(model, &inputs, &targets, None, config, seed)
}

pub const DENOISE_BATCH: usize = 16;

/// Restore unit-range images that already match the model input size.
pub fn denoise(model: &mut Autoencoder, noisy: &[NormalizedImage]) -> Result<Vec<NormalizedImage>> {
    check_images(model, noisy, "noisy")?;
    let side = model.variant.input_side();
    let mut out = Vec::with_capacity(noisy.len());
    for chunk in noisy.chunks(DENOISE_BATCH) {
        let y = model.reconstruct(&batch_tensor(&chunk.iter().collect::<Vec<_>>()));
        for plane in y.data().chunks_exact(side * side) {
            out.push(NormalizedImage::new(
                1,
                side,
                side,
                plane.to_vec(),
                NormMode::Unit,
            )?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub level: f64,
    /// Restored against clean.
    pub restored: MetricReport,
    /// Noisy input against clean, as a baseline.
    pub noisy: MetricReport,
}

/// Noise each clean image at every level, restore it, and score both the
/// restored and the noisy image against the clean one at model resolution.
pub fn noise_sweep<F>(
    mut restore: F,
    clean: &[ImagePatch],
    side: usize,
    levels: &[f64],
    low_fraction: f64,
    seed: u64,
    params: &MetricParams,
) -> Result<Vec<SweepPoint>>
where
    F: FnMut(&[NormalizedImage]) -> Result<Vec<NormalizedImage>>,
{
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sweep levels must be sorted ascending"));
    }
    let ids: Vec<String> = clean.iter().map(|p| p.id.clone()).collect();
    let targets = clean
        .iter()
        .map(|p| to_model_input(p, side))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(levels.len());
    for (i, &level) in levels.iter().enumerate() {
        let pairs = make_noisy_dataset(clean, level, low_fraction, derive_seed(seed, i as u64))?;
        let noisy = pairs
            .iter()
            .map(|p| to_model_input(&p.noisy, side))
            .collect::<Result<Vec<_>>>()?;
        let restored = restore(&noisy)?;
        out.push(SweepPoint {
            level,
            restored: evaluate_denoiser(&restored, &targets, Some(&ids), params)?,
            noisy: evaluate_denoiser(&noisy, &targets, Some(&ids), params)?,
        });
    }
    Ok(out)
}

fn psnr_cell(r: &MetricReport) -> String {
    r.mean_psnr
        .map_or_else(|| "inf".to_string(), |v| v.to_string())
}

/// Columns: level, mae, psnr, ssim, msssim, then the same for the noisy input.
pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::metrics::csv_err(path, e))?;
    w.write_record([
        "level",
        "mae",
        "psnr",
        "ssim",
        "msssim",
        "noisy_mae",
        "noisy_psnr",
        "noisy_ssim",
        "noisy_msssim",
    ])
    .map_err(|e| crate::metrics::csv_err(path, e))?;
    for p in points {
        w.write_record([
            p.level.to_string(),
            p.restored.mean_mae.to_string(),
            psnr_cell(&p.restored),
            p.restored.mean_ssim.to_string(),
            p.restored.mean_msssim.to_string(),
            p.noisy.mean_mae.to_string(),
            psnr_cell(&p.noisy),
            p.noisy.mean_ssim.to_string(),
            p.noisy.mean_msssim.to_string(),
        ])
        .map_err(|e| crate::metrics::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const AE_BACKEND: &str = "autoencoder";

/// Contents of `model.json` in an autoencoder model directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeMeta {
    pub backend: String,
    pub variant: AeVariant,
    pub width: usize,
    pub seed: u64,
    pub config: AeTrainConfig,
    #[serde(default)]
    pub noise_level: Option<f64>,
    #[serde(default)]
    pub reconstruction_history: Option<AeHistory>,
    #[serde(default)]
    pub denoising_history: Option<AeHistory>,
    pub version: String,
}

impl AeMeta {
    pub fn new(model: &Autoencoder, seed: u64, config: AeTrainConfig) -> Self {
        Self {
            backend: AE_BACKEND.into(),
            variant: model.variant,
            width: model.width,
            seed,
            config,
            noise_level: None,
            reconstruction_history: None,
            denoising_history: None,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

pub fn save_autoencoder(model: &mut Autoencoder, meta: &AeMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::weights::save(model, &dir.join(crate::classifiers::WEIGHTS_NPZ))?;
    let path = dir.join(crate::classifiers::MODEL_JSON);
    std::fs::write(&path, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&path, e))
}

pub fn load_autoencoder(dir: &Path) -> Result<(Autoencoder, AeMeta)> {
    let path = dir.join(crate::classifiers::MODEL_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: AeMeta = serde_json::from_str(&text)?;
    if meta.backend != AE_BACKEND {
        return Err(Error::Model(format!(
            "{} holds a `{}` model, not an autoencoder",
            dir.display(),
            meta.backend
        )));
    }
    let mut model = Autoencoder::new(meta.variant, meta.width, meta.seed)?;
    crate::weights::load_from(
        &mut model,
        &NpzArchive::read(&dir.join(crate::classifiers::WEIGHTS_NPZ))?,
    )?;
    Ok((model, meta))
}

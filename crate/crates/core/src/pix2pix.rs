//! Conditional GAN denoiser: U-Net generator, PatchGAN discriminator and
//! the alternating adversarial + L1 training loop.

use std::path::Path;

use marsdust_nn::layer::join;
use marsdust_nn::loss::{bce_with_logits_const, l1};
use marsdust_nn::{
    zero_grad, Activation, ActivationLayer, Adam, BatchNorm2d, Conv2d, ConvTranspose2d, Dropout,
    Init, Layer, Param, Pass, Sequential, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, resize, ImagePatch, NormMode, NormalizedImage, ResizeMethod};
use crate::error::{Error, Result};
use crate::noise::derive_seed;
use crate::npz::NpzArchive;

pub const IMAGE_SIZE: usize = 256;
/// Side images are resized to before the random crop.
pub const JITTER_SIZE: usize = 286;
pub const DOWN_BLOCKS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub image_size: usize,
    pub generator_lr: f32,
    pub discriminator_lr: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub epochs: usize,
    pub lambda_l1: f32,
    pub batch_size: usize,
    /// Generator filters in the first down block.
    pub ngf: usize,
    /// Discriminator filters in the first layer.
    pub ndf: usize,
    pub channels: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            image_size: IMAGE_SIZE,
            generator_lr: 2e-4,
            discriminator_lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            epochs: 10,
            lambda_l1: 100.0,
            batch_size: 1,
            ngf: 64,
            ndf: 64,
            channels: 1,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size != IMAGE_SIZE {
            return Err(Error::invalid(format!(
                "image size must be {IMAGE_SIZE}, got {}",
                self.image_size
            )));
        }
        if !(self.generator_lr > 0.0 && self.discriminator_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.lambda_l1 > 0.0) {
            return Err(Error::invalid("lambda_l1 must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.epochs == 0
            || self.batch_size == 0
            || self.ngf == 0
            || self.ndf == 0
            || self.channels == 0
        {
            return Err(Error::invalid(
                "epochs, batch size, filter counts and channels must be at least 1",
            ));
        }
        Ok(())
    }
}

fn leaky() -> ActivationLayer {
    ActivationLayer::new(Activation::LeakyRelu(0.2))
}

fn gen_norm(c: usize, batch_stats_in_eval: bool) -> BatchNorm2d {
    let mut bn = BatchNorm2d::new(c, 1e-3, 0.01);
    bn.batch_stats_in_eval = batch_stats_in_eval;
    bn
}

/// U-Net with eight stride-2 down blocks (256 -> 1) and eight up blocks; the
/// first seven up outputs are concatenated with the mirrored encoder output.
pub struct Generator {
    downs: Vec<Sequential>,
    ups: Vec<Sequential>,
    last: Sequential,
    channels: usize,
    down_channels: Vec<usize>,
    up_channels: Vec<usize>,
}

impl Generator {
    /// Batch norm normalises with the current batch's statistics at inference too.
    pub fn new(channels: usize, ngf: usize, seed: u64) -> Self {
        Self::with_norm_stats(channels, ngf, seed, true)
    }

    pub fn with_norm_stats(
        channels: usize,
        ngf: usize,
        seed: u64,
        batch_stats_in_eval: bool,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Init::Normal(0.02);
        let down_channels: Vec<usize> = (0..DOWN_BLOCKS).map(|i| ngf << i.min(3)).collect();
        let mut downs = Vec::new();
        let mut cin = channels;
        for (i, &c) in down_channels.iter().enumerate() {
            let mut block =
                Sequential::new().with(Conv2d::new(cin, c, 4, 2, 1, false, init, &mut rng));
            // no norm on the outermost block, nor on the 1x1 innermost one
            if i != 0 && i != DOWN_BLOCKS - 1 {
                block.push(gen_norm(c, batch_stats_in_eval));
            }
            block.push(leaky());
            downs.push(block);
            cin = c;
        }
        let mut ups = Vec::new();
        let mut up_channels = Vec::new();
        for i in 0..DOWN_BLOCKS - 1 {
            let c = down_channels[DOWN_BLOCKS - 2 - i];
            let mut block = Sequential::new()
                .with(ConvTranspose2d::new(cin, c, 4, 2, 1, false, init, &mut rng))
                .with(gen_norm(c, batch_stats_in_eval));
            if i < 3 {
                block.push(Dropout::new(0.5, derive_seed(seed, 100 + i as u64)));
            }
            block.push(ActivationLayer::new(Activation::Relu));
            ups.push(block);
            up_channels.push(c);
            cin = 2 * c;
        }
        let last = Sequential::new()
            .with(ConvTranspose2d::new(
                cin, channels, 4, 2, 1, true, init, &mut rng,
            ))
            .with(ActivationLayer::new(Activation::Tanh));
        Self {
            downs,
            ups,
            last,
            channels,
            down_channels,
            up_channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn down_channels(&self) -> &[usize] {
        &self.down_channels
    }

    /// Shape after each down block, then after each up block's skip
    /// concatenation, then the output.
    pub fn shape_walk(&self, input: &[usize]) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut s = input.to_vec();
        let mut skips = Vec::new();
        for d in &self.downs {
            s = d.output_shape(&s);
            skips.push(s.clone());
            shapes.push(s.clone());
        }
        for (i, u) in self.ups.iter().enumerate() {
            s = u.output_shape(&s);
            let skip = &skips[DOWN_BLOCKS - 2 - i];
            s[1] += skip[1];
            shapes.push(s.clone());
        }
        shapes.push(self.last.output_shape(&s));
        shapes
    }
}

impl Layer for Generator {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let mut skips = Vec::with_capacity(DOWN_BLOCKS);
        let mut h = x.clone();
        for d in &mut self.downs {
            h = d.forward(&h, pass);
            skips.push(h.clone());
        }
        for (i, u) in self.ups.iter_mut().enumerate() {
            h = u.forward(&h, pass);
            h = Tensor::concat_channels(&h, &skips[DOWN_BLOCKS - 2 - i]);
        }
        self.last.forward(&h, pass)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = self.last.backward(grad_out);
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; DOWN_BLOCKS];
        for i in (0..self.ups.len()).rev() {
            let (gu, gs) = Tensor::split_channels(&g, self.up_channels[i]);
            skip_grads[DOWN_BLOCKS - 2 - i] = Some(gs);
            g = self.ups[i].backward(&gu);
        }
        for j in (0..DOWN_BLOCKS).rev() {
            if let Some(gs) = &skip_grads[j] {
                g.add_assign(gs);
            }
            g = self.downs[j].backward(&g);
        }
        g
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, d) in self.downs.iter_mut().enumerate() {
            d.visit_params(&join(prefix, &format!("down.{i}")), f);
        }
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit_params(&join(prefix, &format!("up.{i}")), f);
        }
        self.last.visit_params(&join(prefix, "last"), f);
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        self.shape_walk(input)
            .pop()
            .unwrap_or_else(|| input.to_vec())
    }

    fn kind(&self) -> &'static str {
        "unet_generator"
    }
}

/// 70x70 PatchGAN: 4x4 convs at strides 2, 2, 2, 1, 1 over the channel-wise
/// concatenation of condition and candidate.
pub fn build_discriminator(channels: usize, ndf: usize, seed: u64) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Init::Normal(0.02);
    let norm = |c| BatchNorm2d::new(c, 1e-3, 0.01);
    Sequential::new()
        .with(Conv2d::new(
            2 * channels,
            ndf,
            4,
            2,
            1,
            true,
            init,
            &mut rng,
        ))
        .with(leaky())
        .with(Conv2d::new(ndf, 2 * ndf, 4, 2, 1, false, init, &mut rng))
        .with(norm(2 * ndf))
        .with(leaky())
        .with(Conv2d::new(
            2 * ndf,
            4 * ndf,
            4,
            2,
            1,
            false,
            init,
            &mut rng,
        ))
        .with(norm(4 * ndf))
        .with(leaky())
        .with(Conv2d::new(
            4 * ndf,
            8 * ndf,
            4,
            1,
            1,
            false,
            init,
            &mut rng,
        ))
        .with(norm(8 * ndf))
        .with(leaky())
        .with(Conv2d::new(8 * ndf, 1, 4, 1, 1, true, init, &mut rng))
}

/// Per-step losses. `gen_total = gen_adversarial + lambda_l1 * gen_l1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLossRecord {
    pub gen_total: f64,
    pub gen_adversarial: f64,
    pub gen_l1: f64,
    pub disc_loss: f64,
}

impl GanLossRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.gen_total,
            self.gen_adversarial,
            self.gen_l1,
            self.disc_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn mean(records: &[GanLossRecord]) -> Option<GanLossRecord> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        let sum = |f: fn(&GanLossRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Some(GanLossRecord {
            gen_total: sum(|r| r.gen_total),
            gen_adversarial: sum(|r| r.gen_adversarial),
            gen_l1: sum(|r| r.gen_l1),
            disc_loss: sum(|r| r.disc_loss),
        })
    }
}

pub fn gan_losses(
    real_logits: &Tensor,
    fake_logits: &Tensor,
    fake: &Tensor,
    target: &Tensor,
    lambda_l1: f32,
) -> Result<GanLossRecord> {
    if real_logits.shape() != fake_logits.shape() || fake.shape() != target.shape() {
        return Err(Error::shape(format!(
            "logits {:?}/{:?}, images {:?}/{:?}",
            real_logits.shape(),
            fake_logits.shape(),
            fake.shape(),
            target.shape()
        )));
    }
    let (real, _) = bce_with_logits_const(real_logits, 1.0);
    let (fake_d, _) = bce_with_logits_const(fake_logits, 0.0);
    let (adv, _) = bce_with_logits_const(fake_logits, 1.0);
    let (l1v, _) = l1(fake, target);
    Ok(GanLossRecord {
        gen_total: adv as f64 + lambda_l1 as f64 * l1v as f64,
        gen_adversarial: adv as f64,
        gen_l1: l1v as f64,
        disc_loss: real as f64 + fake_d as f64,
    })
}

fn to_signed(img: &NormalizedImage) -> Vec<f32> {
    img.data.iter().map(|v| v * 2.0 - 1.0).collect()
}

fn crop_mirror(img: &NormalizedImage, top: usize, left: usize, mirror: bool) -> Vec<f32> {
    let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for r in 0..IMAGE_SIZE {
        let row =
            &img.data[(top + r) * img.width + left..(top + r) * img.width + left + IMAGE_SIZE];
        if mirror {
            out.extend(row.iter().rev().map(|v| v * 2.0 - 1.0));
        } else {
            out.extend(row.iter().map(|v| v * 2.0 - 1.0));
        }
    }
    out
}

/// Single-channel `[1, 1, 256, 256]` tensors in [-1, 1]. Training mode
/// resizes to 286, takes one random 256 crop and an optional horizontal
/// mirror, applied identically to both members.
pub fn preprocess_pair(
    noisy: &ImagePatch,
    clean: &ImagePatch,
    train_mode: bool,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if noisy.dims() != clean.dims() {
        return Err(Error::shape(format!(
            "pair members differ in size: {:?} vs {:?}",
            noisy.dims(),
            clean.dims()
        )));
    }
    let shape = [1, 1, IMAGE_SIZE, IMAGE_SIZE];
    let unit = |p: &ImagePatch| normalize(p, NormMode::Unit, None);
    if !train_mode {
        let a = resize(
            &unit(noisy)?,
            (IMAGE_SIZE, IMAGE_SIZE),
            ResizeMethod::Bilinear,
        )?;
        let b = resize(
            &unit(clean)?,
            (IMAGE_SIZE, IMAGE_SIZE),
            ResizeMethod::Bilinear,
        )?;
        return Ok((
            Tensor::from_vec(&shape, to_signed(&a)),
            Tensor::from_vec(&shape, to_signed(&b)),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.random_range(0..=JITTER_SIZE - IMAGE_SIZE);
    let left = rng.random_range(0..=JITTER_SIZE - IMAGE_SIZE);
    let mirror = rng.random_bool(0.5);
    let a = resize(
        &unit(noisy)?,
        (JITTER_SIZE, JITTER_SIZE),
        ResizeMethod::Bilinear,
    )?;
    let b = resize(
        &unit(clean)?,
        (JITTER_SIZE, JITTER_SIZE),
        ResizeMethod::Bilinear,
    )?;
    Ok((
        Tensor::from_vec(&shape, crop_mirror(&a, top, left, mirror)),
        Tensor::from_vec(&shape, crop_mirror(&b, top, left, mirror)),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub mean: GanLossRecord,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub steps: Vec<GanLossRecord>,
    pub epochs: Vec<GanEpoch>,
}

impl GanHistory {
    pub fn run_mean(&self) -> Option<GanLossRecord> {
        GanLossRecord::mean(&self.steps)
    }

    pub fn last_epoch_mean(&self) -> Option<GanLossRecord> {
        self.epochs.last().map(|e| e.mean)
    }
}

pub struct Pix2Pix {
    pub generator: Generator,
    pub discriminator: Sequential,
    pub config: GanConfig,
}

impl Pix2Pix {
    pub fn new(config: GanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            generator: Generator::new(config.channels, config.ngf, derive_seed(seed, 1)),
            discriminator: build_discriminator(config.channels, config.ndf, derive_seed(seed, 2)),
            config,
        })
    }
}

fn check_finite(r: &GanLossRecord, epoch: usize, step: usize) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "non-finite GAN loss at epoch {epoch}, step {step}: {r:?}"
        )))
    }
}

/// One alternating discriminator/generator update on a batch.
fn train_step(
    model: &mut Pix2Pix,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    input: &Tensor,
    target: &Tensor,
) -> GanLossRecord {
    let lambda = model.config.lambda_l1;
    let ch = model.config.channels;
    let fake = model.generator.forward(input, Pass::TRAIN);

    let d = &mut model.discriminator;
    let real_logits = d.forward(&Tensor::concat_channels(input, target), Pass::TRAIN);
    let (real_loss, g_real) = bce_with_logits_const(&real_logits, 1.0);
    d.backward(&g_real);
    let fake_logits = d.forward(&Tensor::concat_channels(input, &fake), Pass::TRAIN);
    let (fake_loss, g_fake) = bce_with_logits_const(&fake_logits, 0.0);
    d.backward(&g_fake);
    opt_d.step(d);

    let logits = d.forward(&Tensor::concat_channels(input, &fake), Pass::TRAIN);
    let (adv, g_adv) = bce_with_logits_const(&logits, 1.0);
    let g_pair = d.backward(&g_adv);
    zero_grad(d);
    let (_, mut g_out) = Tensor::split_channels(&g_pair, ch);
    let (l1v, g_l1) = l1(&fake, target);
    for (g, gl) in g_out.data_mut().iter_mut().zip(g_l1.data()) {
        *g += lambda * gl;
    }
    model.generator.backward(&g_out);
    opt_g.step(&mut model.generator);

    GanLossRecord {
        gen_total: adv as f64 + lambda as f64 * l1v as f64,
        gen_adversarial: adv as f64,
        gen_l1: l1v as f64,
        disc_loss: real_loss as f64 + fake_loss as f64,
    }
}

pub const GENERATOR_CHECKPOINT: &str = "generator_epoch";
pub const HISTORY_JSON: &str = "history.json";

/// Train on `(noisy, clean)` pairs. With `checkpoint_dir`, the generator is
/// saved after every epoch and the loss history rewritten.
pub fn train_pix2pix(
    model: &mut Pix2Pix,
    pairs: &[(ImagePatch, ImagePatch)],
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<GanHistory> {
    model.config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let cfg = model.config.clone();
    let mut opt_g = Adam::with_betas(cfg.generator_lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt_d = Adam::with_betas(cfg.discriminator_lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = GanHistory::default();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let first = history.steps.len();
        for batch in order.chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(batch.len());
            let mut ys = Vec::with_capacity(batch.len());
            for &i in batch {
                let (x, y) =
                    preprocess_pair(&pairs[i].0, &pairs[i].1, true, derive_seed(seed, step))?;
                step += 1;
                xs.push(x);
                ys.push(y);
            }
            let (x, y) = (stack(&xs), stack(&ys));
            let record = train_step(model, &mut opt_g, &mut opt_d, &x, &y);
            check_finite(&record, epoch, history.steps.len())?;
            history.steps.push(record);
        }
        let mean = GanLossRecord::mean(&history.steps[first..]).expect("epoch has steps");
        log::info!(
            "pix2pix epoch {epoch}: gen_total {:.4} gen_l1 {:.4} disc {:.4}",
            mean.gen_total,
            mean.gen_l1,
            mean.disc_loss
        );
        history.epochs.push(GanEpoch { epoch, mean });
        if let Some(dir) = checkpoint_dir {
            crate::weights::save(
                &mut model.generator,
                &dir.join(format!("{GENERATOR_CHECKPOINT}_{epoch:03}.npz")),
            )?;
            let path = dir.join(HISTORY_JSON);
            std::fs::write(&path, serde_json::to_string_pretty(&history)?)
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(history)
}

fn stack(items: &[Tensor]) -> Tensor {
    if items.len() == 1 {
        items[0].clone()
    } else {
        let per: Vec<Tensor> = items
            .iter()
            .map(|t| t.clone().reshape(&t.shape()[1..]))
            .collect();
        Tensor::stack(&per)
    }
}

/// Generator output for a `[n, c, 256, 256]` input in [-1, 1].
pub fn translate(generator: &mut Generator, input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || s[2] != IMAGE_SIZE || s[3] != IMAGE_SIZE || s[1] != generator.channels {
        return Err(Error::shape(format!(
            "expected [n, {}, {IMAGE_SIZE}, {IMAGE_SIZE}], got {s:?}",
            generator.channels
        )));
    }
    Ok(generator.forward(input, Pass::INFER))
}

/// Restore single-channel unit-scale images of any size: each is resized
/// to 256, translated, and resized back to its own dimensions.
pub fn restore_images(
    generator: &mut Generator,
    noisy: &[NormalizedImage],
) -> Result<Vec<NormalizedImage>> {
    noisy
        .iter()
        .map(|img| {
            if img.channels != 1 {
                return Err(Error::shape(format!(
                    "expected one channel, got {}",
                    img.channels
                )));
            }
            let up = resize(img, (IMAGE_SIZE, IMAGE_SIZE), ResizeMethod::Bilinear)?;
            let x = Tensor::from_vec(&[1, 1, IMAGE_SIZE, IMAGE_SIZE], to_signed(&up));
            let y = translate(generator, &x)?;
            let data = y
                .data()
                .iter()
                .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
                .collect();
            let out = NormalizedImage::new(1, IMAGE_SIZE, IMAGE_SIZE, data, NormMode::Unit)?;
            resize(&out, (img.height, img.width), ResizeMethod::Bilinear)
        })
        .collect()
}

pub const PIX2PIX_BACKEND: &str = "pix2pix";

/// Contents of `model.json` in a Pix2Pix model directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pix2PixMeta {
    pub backend: String,
    pub config: GanConfig,
    pub seed: u64,
    #[serde(default)]
    pub noise_level: Option<f64>,
    #[serde(default)]
    pub run_mean: Option<GanLossRecord>,
    #[serde(default)]
    pub last_epoch_mean: Option<GanLossRecord>,
    pub version: String,
}

impl Pix2PixMeta {
    pub fn new(config: GanConfig, seed: u64) -> Self {
        Self {
            backend: PIX2PIX_BACKEND.into(),
            config,
            seed,
            noise_level: None,
            run_mean: None,
            last_epoch_mean: None,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

pub fn save_generator(generator: &mut Generator, meta: &Pix2PixMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::weights::save(generator, &dir.join(crate::classifiers::WEIGHTS_NPZ))?;
    let path = dir.join(crate::classifiers::MODEL_JSON);
    std::fs::write(&path, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&path, e))
}

pub fn load_generator(dir: &Path) -> Result<(Generator, Pix2PixMeta)> {
    let path = dir.join(crate::classifiers::MODEL_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Pix2PixMeta = serde_json::from_str(&text)?;
    if meta.backend != PIX2PIX_BACKEND {
        return Err(Error::Model(format!(
            "{} holds a `{}` model, not pix2pix",
            dir.display(),
            meta.backend
        )));
    }
    let mut generator = Generator::new(meta.config.channels, meta.config.ngf, 0);
    crate::weights::load_from(
        &mut generator,
        &NpzArchive::read(&dir.join(crate::classifiers::WEIGHTS_NPZ))?,
    )?;
    Ok((generator, meta))
}

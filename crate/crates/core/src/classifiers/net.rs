use std::collections::HashMap;
use std::path::{Path, PathBuf};

use marsdust_nn::loss::{softmax, softmax_cross_entropy};
use marsdust_nn::{
    load_named, set_trainable, snapshot, Activation, ActivationLayer, Adam, Conv2d, Dropout,
    Flatten, Init, Layer, Linear, MaxPool2d, Param, Pass, Sequential, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resnet::{ResNet50, RESNET50_FEATURES};
use crate::dataset::{
    normalize, resize, to_rgb_stack, ChannelStats, ImagePatch, NormMode, ResizeMethod,
};
use crate::error::{Error, Result};
use crate::npz::NpzArchive;

/// How a raw patch becomes a network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mode: NormMode,
    pub stats: Option<ChannelStats>,
    pub resize: ResizeMethod,
}

impl InputSpec {
    pub fn cnn() -> Self {
        Self {
            channels: 1,
            height: 64,
            width: 64,
            mode: NormMode::Unit,
            stats: None,
            resize: ResizeMethod::Bilinear,
        }
    }

    /// 224 x 224 RGB-stacked input standardized with single-channel stats.
    pub fn transfer(stats: ChannelStats) -> Self {
        Self {
            channels: 3,
            height: 224,
            width: 224,
            mode: NormMode::Standardized,
            stats: Some(ChannelStats {
                mean: vec![stats.mean[0]; 3],
                std: vec![stats.std[0]; 3],
            }),
            resize: ResizeMethod::Bilinear,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn prepare(&self, patch: &ImagePatch) -> Result<Vec<f32>> {
        let unit = normalize(patch, NormMode::Unit, None)?;
        let sized = resize(&unit, (self.height, self.width), self.resize)?;
        let stacked = match self.channels {
            1 => sized,
            3 => to_rgb_stack(&sized)?,
            c => {
                return Err(Error::invalid(format!(
                    "unsupported input channel count {c}"
                )))
            }
        };
        Ok(stacked.convert(self.mode, self.stats.as_ref())?.data)
    }

    pub fn batch(&self, patches: &[&ImagePatch]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(patches.len() * self.channels * self.height * self.width);
        for p in patches {
            data.extend(self.prepare(p)?);
        }
        Ok(Tensor::from_vec(
            &[patches.len(), self.channels, self.height, self.width],
            data,
        ))
    }
}

/// conv3x3(32) > pool2 > conv3x3(64) > pool2 > conv3x3(64) > flatten >
/// dense(64) > dense(2), valid padding and ReLU throughout.
pub fn build_cnn(seed: u64) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relu = || ActivationLayer::new(Activation::Relu);
    let init = Init::GlorotUniform;
    Sequential::new()
        .with(Conv2d::new(1, 32, 3, 1, 0, true, init, &mut rng))
        .with(relu())
        .with(MaxPool2d::new(2, 2, 0))
        .with(Conv2d::new(32, 64, 3, 1, 0, true, init, &mut rng))
        .with(relu())
        .with(MaxPool2d::new(2, 2, 0))
        .with(Conv2d::new(64, 64, 3, 1, 0, true, init, &mut rng))
        .with(relu())
        .with(Flatten::new())
        .with(Linear::new(64 * 12 * 12, 64, init, &mut rng))
        .with(relu())
        .with(Linear::new(64, 2, init, &mut rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub dropout: f32,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 128],
            dropout: 0.3,
        }
    }
}

/// Frozen (by default) ResNet-50 backbone with a dense head on its
/// flattened feature map.
pub struct TransferModel {
    pub backbone: ResNet50,
    pub head: Sequential,
    fine_tune: bool,
}

impl TransferModel {
    pub fn new(mut backbone: ResNet50, head: &HeadConfig, seed: u64) -> Self {
        set_trainable(&mut backbone, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new().with(Flatten::new());
        let mut width = RESNET50_FEATURES * 7 * 7;
        for (i, &h) in head.hidden.iter().enumerate() {
            net.push(Linear::new(width, h, Init::GlorotUniform, &mut rng));
            net.push(ActivationLayer::new(Activation::Relu));
            net.push(Dropout::new(head.dropout, seed.wrapping_add(i as u64 + 1)));
            width = h;
        }
        net.push(Linear::new(width, 2, Init::GlorotUniform, &mut rng));
        Self {
            backbone,
            head: net,
            fine_tune: false,
        }
    }

    /// Make the backbone trainable too (batch-norm statistics stay frozen).
    pub fn unfreeze(&mut self) {
        set_trainable(&mut self.backbone, true);
        self.fine_tune = true;
    }

    pub fn is_frozen(&self) -> bool {
        !self.fine_tune
    }
}

impl Layer for TransferModel {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let bpass = Pass {
            train: false,
            record: pass.record && self.fine_tune,
        };
        let features = self.backbone.forward(x, bpass);
        self.head.forward(&features, pass)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let g = self.head.backward(grad_out);
        if self.fine_tune {
            self.backbone.backward(&g)
        } else {
            g
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone
            .visit_params(&marsdust_nn::layer::join(prefix, "backbone"), f);
        self.head
            .visit_params(&marsdust_nn::layer::join(prefix, "head"), f);
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        self.head.output_shape(&self.backbone.output_shape(input))
    }

    fn kind(&self) -> &'static str {
        "transfer"
    }
}

pub const WEIGHTS_ENV: &str = "MARSDUST_RESNET50_WEIGHTS";

/// Where pretrained backbone weights are found: an explicit path, or the
/// `MARSDUST_RESNET50_WEIGHTS` environment variable.
pub fn pretrained_weights_path(explicit: Option<&Path>) -> Result<PathBuf> {
    let candidate = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from));
    match candidate {
        Some(p) if p.is_file() => Ok(p),
        Some(p) => Err(Error::WeightsUnavailable(format!(
            "{} does not exist; export torchvision's ImageNet ResNet-50 state dict to an .npz \
             (see README, \"Pretrained backbone\") and point {WEIGHTS_ENV} at it",
            p.display()
        ))),
        None => Err(Error::WeightsUnavailable(format!(
            "no ResNet-50 weights configured; set {WEIGHTS_ENV} or pass --weights with an .npz \
             export of torchvision's ImageNet ResNet-50 state dict (see README, \"Pretrained backbone\")"
        ))),
    }
}

/// Load ImageNet weights into a ResNet-50. Member names follow torchvision's
/// state dict (`layer1.0.conv1.weight`, ...); a `backbone.` prefix is accepted.
pub fn load_resnet50(path: &Path) -> Result<ResNet50> {
    let archive = NpzArchive::read(path)?;
    let mut net = ResNet50::new(&mut ChaCha8Rng::seed_from_u64(0));
    let lookup = |name: &str| -> Option<Tensor> {
        let candidates = [name.to_string(), format!("backbone.{name}")];
        candidates.iter().find_map(|n| {
            archive
                .array(n)
                .ok()
                .map(|a| Tensor::from_vec(&[a.len()], a.to_f32_vec()))
        })
    };
    load_named(&mut net, "", &lookup)
        .map_err(|e| Error::WeightsUnavailable(format!("{}: {e}", path.display())))?;
    Ok(net)
}

pub fn build_transfer_model(
    weights: Option<&Path>,
    head: &HeadConfig,
    seed: u64,
) -> Result<TransferModel> {
    let path = pretrained_weights_path(weights)?;
    Ok(TransferModel::new(load_resnet50(&path)?, head, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyperparams {
    pub optimizer: String,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: String,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            learning_rate: 3e-4,
            epochs: 10,
            batch_size: 32,
            loss: "sparse_categorical_crossentropy".into(),
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.optimizer != "adam" {
            return Err(Error::invalid(format!(
                "unsupported optimizer `{}`",
                self.optimizer
            )));
        }
        if self.loss != "sparse_categorical_crossentropy" {
            return Err(Error::invalid(format!("unsupported loss `{}`", self.loss)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

/// A neural classifier with its input preparation.
pub struct NetClassifier {
    pub input: InputSpec,
    pub net: Box<dyn Layer>,
}

pub const PREDICT_BATCH: usize = 16;

impl NetClassifier {
    pub fn new(input: InputSpec, net: Box<dyn Layer>) -> Self {
        Self { input, net }
    }

    /// Class probabilities `[p(not_dusty), p(dusty)]` per patch.
    pub fn class_probabilities(&mut self, patches: &[&ImagePatch]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(PREDICT_BATCH) {
            let x = self.input.batch(chunk)?;
            let p = softmax(&self.net.forward(&x, Pass::INFER));
            out.extend(p.data().chunks_exact(2).map(|r| [r[0] as f64, r[1] as f64]));
        }
        Ok(out)
    }

    /// Mean cross-entropy and accuracy without touching any state.
    pub fn score(&mut self, data: &[(ImagePatch, u8)]) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut correct = 0;
        for chunk in data.chunks(PREDICT_BATCH) {
            let refs: Vec<&ImagePatch> = chunk.iter().map(|(p, _)| p).collect();
            let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l as usize).collect();
            let logits = self.net.forward(&self.input.batch(&refs)?, Pass::INFER);
            let (l, _) = softmax_cross_entropy(&logits, &labels);
            loss += l as f64 * chunk.len() as f64;
            correct += count_correct(&logits, &labels);
        }
        let n = data.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    logits
        .data()
        .chunks_exact(2)
        .zip(labels)
        .filter(|(r, &l)| usize::from(r[1] > r[0]) == l)
        .count()
}

fn check_data(
    data: &[(ImagePatch, u8)],
    what: &str,
    dims: Option<(usize, usize)>,
) -> Result<Option<(usize, usize)>> {
    let mut dims = dims;
    for (p, l) in data {
        if *l > 1 {
            return Err(Error::invalid(format!(
                "{what} label code {l} for {} is not 0 or 1",
                p.id
            )));
        }
        match dims {
            None => dims = Some(p.dims()),
            Some(d) if d != p.dims() => {
                return Err(Error::shape(format!(
                    "{what} patch {} is {}x{}, expected {}x{}",
                    p.id, p.height, p.width, d.0, d.1
                )))
            }
            _ => {}
        }
    }
    Ok(dims)
}

/// Mini-batch Adam on softmax cross-entropy. The weights of the epoch with
/// the best validation accuracy are restored at the end (the last epoch's
/// when `val` is empty).
pub fn train_classifier(
    model: &mut NetClassifier,
    train: &[(ImagePatch, u8)],
    val: &[(ImagePatch, u8)],
    hyper: &TrainHyperparams,
    seed: u64,
) -> Result<TrainHistory> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training data"));
    }
    let dims = check_data(train, "train", None)?;
    check_data(val, "val", dims)?;
    let probe = model.input.batch(&[&train[0].0])?;
    let expected: Vec<usize> = std::iter::once(1).chain(model.input.shape()).collect();
    if probe.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "prepared input {:?} vs {:?}",
            probe.shape(),
            expected
        )));
    }

    let mut opt = Adam::new(hyper.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_DA7A);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, HashMap<String, Tensor>)> = None;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(hyper.batch_size) {
            let refs: Vec<&ImagePatch> = batch.iter().map(|&i| &train[i].0).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].1 as usize).collect();
            let x = model.input.batch(&refs)?;
            let logits = model.net.forward(&x, Pass::TRAIN);
            let (loss, grad) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
            }
            model.net.backward(&grad);
            opt.step(model.net.as_mut());
            loss_sum += loss as f64 * batch.len() as f64;
            correct += count_correct(&logits, &labels);
        }
        let n = train.len() as f64;
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = model.score(val)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:?} val_acc {:?}",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        history.epochs.push(record);
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, snapshot(model.net.as_mut(), "").into_iter().collect()));
                history.best_epoch = epoch;
            }
        }
    }
    match best {
        Some((_, weights)) => {
            load_named(model.net.as_mut(), "", &|name| weights.get(name).cloned())
                .map_err(Error::Model)?;
        }
        None => history.best_epoch = hyper.epochs,
    }
    Ok(history)
}

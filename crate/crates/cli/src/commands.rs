use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use marsdust::autoencoder::{
    denoise, load_autoencoder, noise_sweep, save_autoencoder, train_denoiser, write_sweep_csv,
    AeMeta, AeVariant, Autoencoder, SweepPoint, AE_BACKEND,
};
use marsdust::classifiers::net::{
    build_cnn, build_transfer_model, train_classifier, InputSpec, NetClassifier,
};
use marsdust::classifiers::report::{evaluate, EvalReport};
use marsdust::classifiers::{
    Architecture, ContrastStub, ModelMeta, PcaSvmClassifier, TrainedClassifier, MODEL_JSON,
};
use marsdust::dataset::{
    compute_stats, denormalize, load_manifest, normalize, prepare_split, resize, CacheKey,
    ImagePatch, Label, NormMode, NormalizedImage, PatchLoader, ResizeMethod, Split, SplitManifest,
};
use marsdust::metrics::{evaluate_denoiser, MetricParams};
use marsdust::noise::{
    derive_seed, histogram, make_noisy_dataset, NoiseSpec, PEAK_FLOOR, SMOOTHING_WINDOW,
};
use marsdust::npy::NpyArray;
use marsdust::npz::{NpzArchive, NpzBuilder};
use marsdust::pipeline::{list_inputs, run_filter_dir, FilterOptions};
use marsdust::pix2pix::{
    load_generator, restore_images, save_generator, train_pix2pix, Pix2Pix, Pix2PixMeta,
    PIX2PIX_BACKEND,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, args_value, write_resolved, RunConfig};
use crate::plot;
use crate::{
    AnalyzeNoiseArgs, BackendArg, Cli, Command, DenoiseArgs, EvalArgs, FilterArgs, IngestArgs,
    MetricsArgs, ModeArg, ModelArg, NoiseArgs, SweepArgs, TrainAeArgs, TrainArgs, TrainPix2pixArgs,
};

/// A command-line mistake detected after parsing; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Run one subcommand; the returned value is the process exit status.
pub fn run(cli: &Cli) -> Result<u8> {
    let cfg = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Ingest(a) => ingest(a, cfg),
        Command::AnalyzeNoise(a) => analyze_noise(a, cfg),
        Command::Noise(a) => noise(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::Filter(a) => filter(a, cfg),
        Command::TrainAe(a) => train_ae(a, cfg),
        Command::TrainPix2pix(a) => train_pix2pix_cmd(a, cfg),
        Command::Denoise(a) => denoise_cmd(a, cfg),
        Command::Sweep(a) => sweep(a, cfg),
        Command::Metrics(a) => metrics(a, cfg),
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn opt_path_value(p: Option<&PathBuf>) -> Value {
    p.map_or(Value::Null, |p| path_value(p))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `<file>.config_resolved.json` next to a single-file artifact.
fn write_sidecar(file: &Path, command: &str, args: Value, cfg: &RunConfig) -> Result<()> {
    let name = file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let path = file.with_file_name(format!("{name}.config_resolved.json"));
    let record = config::ResolvedRun {
        command,
        args,
        config: cfg,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&path, &record)
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn dataset(cfg: &RunConfig) -> Result<SplitManifest> {
    let path = cfg.manifest_path()?;
    load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
        .map_err(|_| usage(format!("unknown split `{s}` (expected train, val or test)")))
}

/// Every decodable image in `dir`, sorted by file name, with the file name as id.
fn folder_patches(dir: &Path) -> Result<Vec<ImagePatch>> {
    let loader = PatchLoader::new();
    let mut out = Vec::new();
    for path in list_inputs(dir)? {
        match loader.load(&path) {
            Ok(mut p) => {
                p.id = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.push(p);
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        bail!("no readable images in {}", dir.display());
    }
    Ok(out)
}

/// Not-dusty patches of one dataset split: the clean material for denoisers.
fn clean_patches(
    cfg: &RunConfig,
    folder: Option<&PathBuf>,
    split: Split,
) -> Result<Vec<ImagePatch>> {
    if let Some(dir) = folder {
        return folder_patches(dir);
    }
    let manifest = dataset(cfg)?;
    let clean: Vec<ImagePatch> = prepare_split(&manifest, split, cfg.seed)?
        .into_iter()
        .filter(|(_, code)| *code == Label::NotDusty.code())
        .map(|(p, _)| p)
        .collect();
    if clean.is_empty() {
        bail!("the {} split has no not-dusty patches", split.as_str());
    }
    Ok(clean)
}

/// Seeded split into (train, held out); the held-out share rounds down.
fn holdout(
    patches: Vec<ImagePatch>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ImagePatch>, Vec<ImagePatch>)> {
    if !(0.0..1.0).contains(&fraction) {
        bail!(usage(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let mut keyed: Vec<(u64, ImagePatch)> = patches
        .into_iter()
        .enumerate()
        .map(|(i, p)| (derive_seed(seed, i as u64), p))
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    let n_hold = (keyed.len() as f64 * fraction).floor() as usize;
    let hold = keyed.split_off(keyed.len() - n_hold);
    Ok((
        keyed.into_iter().map(|(_, p)| p).collect(),
        hold.into_iter().map(|(_, p)| p).collect(),
    ))
}

fn stack(patches: &[&ImagePatch]) -> Result<NpyArray> {
    let (h, w) = patches.first().map_or((0, 0), |p| p.dims());
    if let Some(p) = patches.iter().find(|p| p.dims() != (h, w)) {
        bail!(
            "{} is {}x{}, expected {h}x{w}; stacks need one common size",
            p.id,
            p.height,
            p.width
        );
    }
    let data = patches
        .iter()
        .flat_map(|p| p.pixels.iter().copied())
        .collect();
    Ok(NpyArray::u8(vec![patches.len(), h, w], data)?)
}

fn unstack(array: &NpyArray, names: Option<&[String]>) -> Result<Vec<ImagePatch>> {
    let [n, h, w] = array.shape[..] else {
        bail!("expected an (N, H, W) stack, got shape {:?}", array.shape);
    };
    if let Some(names) = names {
        if names.len() != n {
            bail!("{} names for {n} images", names.len());
        }
    }
    let pixels: Vec<u8> = match array.as_u8() {
        Some(d) => d.to_vec(),
        None => array
            .to_f32_vec()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    };
    pixels
        .chunks_exact(h * w)
        .enumerate()
        .map(|(i, px)| {
            let id = names.map_or_else(|| i.to_string(), |n| n[i].clone());
            Ok(ImagePatch::new(id, h, w, px.to_vec())?)
        })
        .collect()
}

/// The first of the `preferred` arrays present in an archive, or its only
/// array, named by the archive's `names.json` if it has one.
fn read_stack(path: &Path, preferred: &[&str]) -> Result<Vec<ImagePatch>> {
    let archive = NpzArchive::read(path).with_context(|| format!("reading {}", path.display()))?;
    let arrays: Vec<String> = archive
        .names()
        .filter_map(|n| n.strip_suffix(".npy"))
        .map(str::to_string)
        .collect();
    let name = match preferred.iter().find(|p| arrays.iter().any(|a| a == *p)) {
        Some(p) => p.to_string(),
        None if arrays.len() == 1 => arrays[0].clone(),
        None => bail!(
            "{} holds none of {preferred:?} and {} other arrays",
            path.display(),
            arrays.len()
        ),
    };
    let names: Option<Vec<String>> = archive
        .names()
        .any(|n| n == "names.json")
        .then(|| archive.json("names.json"))
        .transpose()?;
    unstack(&archive.array(&name)?, names.as_deref())
}

fn to_unit(patches: &[ImagePatch]) -> Result<Vec<NormalizedImage>> {
    Ok(patches
        .iter()
        .map(|p| normalize(p, NormMode::Unit, None))
        .collect::<marsdust::Result<_>>()?)
}

fn mode(m: ModeArg) -> NormMode {
    match m {
        ModeArg::Unit => NormMode::Unit,
        ModeArg::SignedUnit => NormMode::SignedUnit,
        ModeArg::Standardized => NormMode::Standardized,
    }
}

fn ingest(a: &IngestArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.height == 0 || a.width == 0 {
        return Err(usage("--height and --width must be positive"));
    }
    let manifest = dataset(&cfg)?;
    let norm = mode(a.mode);
    let splits: Vec<(Split, Vec<(ImagePatch, u8)>)> = Split::ALL
        .iter()
        .map(|&s| Ok((s, prepare_split(&manifest, s, cfg.seed)?)))
        .collect::<Result<_>>()?;
    let train_patches: Vec<ImagePatch> = splits[0].1.iter().map(|(p, _)| p.clone()).collect();
    let stats = compute_stats(&train_patches)?;
    create_dir(&a.out)?;
    let mut counts = serde_json::Map::new();
    for (split, data) in &splits {
        let mut images = Vec::with_capacity(data.len());
        for (p, _) in data {
            let mut unit = normalize(p, NormMode::Unit, None)?;
            if unit.dims() != (a.height, a.width) {
                unit = resize(&unit, (a.height, a.width), ResizeMethod::Bilinear)?;
            }
            images.push(unit.convert(norm, Some(&stats))?);
        }
        let labels: Vec<u8> = data.iter().map(|(_, c)| *c).collect();
        let key = CacheKey {
            split: *split,
            mode: norm,
            height: a.height,
            width: a.width,
            seed: cfg.seed,
        };
        marsdust::dataset::write_cache(&a.out, &key, &images, &labels)?;
        let [nd, d] = manifest.label_counts(*split);
        counts.insert(
            split.as_str().into(),
            json!({ "total": data.len(), "not_dusty": nd, "dusty": d, "stem": key.stem() }),
        );
        info!("{}: {} patches ({d} dusty)", split.as_str(), data.len());
    }
    write_json(
        &a.out.join("summary.json"),
        &json!({ "splits": counts, "train_stats": stats }),
    )?;
    let args = args_value(&[
        ("manifest", opt_path_value(a.manifest.as_ref())),
        ("out", path_value(&a.out)),
        ("mode", json!(norm.as_str())),
        ("height", json!(a.height)),
        ("width", json!(a.width)),
    ]);
    write_resolved(&a.out, "ingest", args, &cfg)?;
    Ok(0)
}

fn analyze_noise(a: &AnalyzeNoiseArgs, cfg: RunConfig) -> Result<u8> {
    let patches = match &a.input {
        Some(dir) => folder_patches(dir)?,
        None => {
            let split = parse_split(&a.split)?;
            prepare_split(&dataset(&cfg)?, split, cfg.seed)?
                .into_iter()
                .filter(|(_, c)| *c == Label::Dusty.code())
                .map(|(p, _)| p)
                .collect()
        }
    };
    let hist = histogram(&patches)?;
    create_dir(&a.out)?;
    let mut csv = String::from("value,count,smoothed\n");
    for (v, (c, s)) in hist.counts.iter().zip(&hist.smoothed).enumerate() {
        csv.push_str(&format!("{v},{c},{s}\n"));
    }
    write_text(&a.out.join("histogram.csv"), &csv)?;
    write_json(
        &a.out.join("peaks.json"),
        &json!({
            "peaks": hist.peaks,
            "n_patches": patches.len(),
            "n_pixels": hist.total(),
            "smoothing_window": SMOOTHING_WINDOW,
            "peak_floor": PEAK_FLOOR,
        }),
    )?;
    plot::bar_chart(&a.out.join("histogram.png"), &hist.smoothed, &hist.peaks)?;
    info!("peaks at {:?} over {} patches", hist.peaks, patches.len());
    let args = args_value(&[
        ("in", opt_path_value(a.input.as_ref())),
        ("split", json!(a.split)),
        ("out", path_value(&a.out)),
    ]);
    write_resolved(&a.out, "analyze-noise", args, &cfg)?;
    Ok(0)
}

#[derive(Serialize)]
struct NoisedImage<'a> {
    name: &'a str,
    #[serde(flatten)]
    spec: NoiseSpec,
}

fn noise(a: &NoiseArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.ratio {
        cfg.noise.low_fraction = r;
    }
    let clean = folder_patches(&a.input)?;
    let pairs = make_noisy_dataset(&clean, a.level, cfg.noise.low_fraction, cfg.seed)?;
    let noisy_stack = stack(&pairs.iter().map(|p| &p.noisy).collect::<Vec<_>>())?;
    let clean_stack = stack(&clean.iter().collect::<Vec<_>>())?;
    let names: Vec<&str> = clean.iter().map(|p| p.id.as_str()).collect();
    create_dir(&a.out)?;
    noisy_stack.write(&a.out.join("noisy.npy"))?;
    clean_stack.write(&a.out.join("clean.npy"))?;
    write_json(&a.out.join("names.json"), &names)?;
    let images: Vec<NoisedImage> = pairs
        .iter()
        .zip(&names)
        .map(|(p, n)| NoisedImage {
            name: n,
            spec: p.spec,
        })
        .collect();
    write_json(
        &a.out.join("noise_spec.json"),
        &json!({
            "level": a.level,
            "low_fraction": cfg.noise.low_fraction,
            "seed": cfg.seed,
            "low_band": NoiseSpec::DEFAULT_LOW,
            "high_band": NoiseSpec::DEFAULT_HIGH,
            "images": images,
        }),
    )?;
    let mut npz = NpzBuilder::new();
    npz.array("noisy", &noisy_stack)
        .array("clean", &clean_stack)
        .file("names.json", serde_json::to_vec(&names)?);
    npz.write(&a.out.join("pairs.npz"))?;
    info!("noised {} images at level {}", names.len(), a.level);
    let args = args_value(&[
        ("level", json!(a.level)),
        ("ratio", json!(a.ratio)),
        ("in", path_value(&a.input)),
        ("out", path_value(&a.out)),
    ]);
    write_resolved(&a.out, "noise", args, &cfg)?;
    Ok(0)
}

fn model_name(m: ModelArg) -> &'static str {
    match m {
        ModelArg::Svm => "svm",
        ModelArg::Cnn => "cnn",
        ModelArg::Transfer => "transfer",
        ModelArg::Stub => "stub",
    }
}

fn run_dir(cfg: &RunConfig, given: Option<&PathBuf>, name: &str) -> PathBuf {
    given
        .cloned()
        .unwrap_or_else(|| cfg.output_dir.join(format!("{name}-seed{}", cfg.seed)))
}

fn score(clf: &mut TrainedClassifier, data: &[(ImagePatch, u8)]) -> Result<(EvalReport, Vec<f64>)> {
    let refs: Vec<&ImagePatch> = data.iter().map(|(p, _)| p).collect();
    let proba = clf.predict_proba(&refs)?;
    let pred = clf.predict(&refs)?;
    let truth: Vec<u8> = data.iter().map(|(_, c)| *c).collect();
    Ok((evaluate(&pred, &truth)?, proba))
}

fn write_confusion(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    let m = report.confusion;
    let csv = format!(
        "truth,pred_not_dusty,pred_dusty\nnot_dusty,{},{}\ndusty,{},{}\n",
        m[0][0], m[0][1], m[1][0], m[1][1]
    );
    write_text(&dir.join(format!("{stem}.csv")), &csv)?;
    let cells = [
        [m[0][0] as usize, m[0][1] as usize],
        [m[1][0] as usize, m[1][1] as usize],
    ];
    plot::confusion(&dir.join(format!("{stem}.png")), &cells)
}

fn train(a: &TrainArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = &a.weights {
        cfg.resnet50_weights = Some(w.clone());
    }
    let seed = cfg.seed;
    let out = run_dir(
        &cfg,
        a.out.as_ref(),
        &format!("train-{}", model_name(a.model)),
    );
    let manifest = dataset(&cfg)?;
    let train = prepare_split(&manifest, Split::Train, seed)?;
    let val = prepare_split(&manifest, Split::Val, seed)?;
    let test = prepare_split(&manifest, Split::Test, seed)?;
    if train.is_empty() {
        bail!("the training split is empty");
    }
    info!(
        "{} train / {} val / {} test patches",
        train.len(),
        val.len(),
        test.len()
    );
    let hyper = cfg.classifier.train.clone();
    let mut history = None;
    let mut clf = match a.model {
        ModelArg::Svm => TrainedClassifier::PcaSvm(PcaSvmClassifier::fit(
            &train,
            cfg.classifier.pca_components,
            cfg.classifier.keep_components,
            &cfg.classifier.svm,
        )?),
        ModelArg::Stub => TrainedClassifier::Stub(ContrastStub::fit(&train)?),
        ModelArg::Cnn => {
            let mut model = NetClassifier::new(InputSpec::cnn(), Box::new(build_cnn(seed)));
            history = Some(train_classifier(&mut model, &train, &val, &hyper, seed)?);
            TrainedClassifier::Net {
                architecture: Architecture::Cnn,
                model,
                head: None,
            }
        }
        ModelArg::Transfer => {
            let head = cfg.classifier.head.clone();
            let mut backbone = build_transfer_model(cfg.resnet50_weights.as_deref(), &head, seed)?;
            if cfg.classifier.fine_tune {
                backbone.unfreeze();
            }
            let train_patches: Vec<ImagePatch> = train.iter().map(|(p, _)| p.clone()).collect();
            let stats = compute_stats(&train_patches)?;
            let mut model = NetClassifier::new(InputSpec::transfer(stats), Box::new(backbone));
            history = Some(train_classifier(&mut model, &train, &val, &hyper, seed)?);
            TrainedClassifier::Net {
                architecture: Architecture::TransferResnet50,
                model,
                head: Some(head),
            }
        }
    };
    create_dir(&out)?;
    let mut metrics = serde_json::Map::new();
    for (name, data) in [("val", &val), ("test", &test)] {
        if data.is_empty() {
            continue;
        }
        let (report, _) = score(&mut clf, data)?;
        info!("{name} accuracy {:.4}", report.accuracy);
        write_confusion(&out, &format!("confusion_{name}"), &report)?;
        metrics.insert(name.into(), serde_json::to_value(report)?);
    }
    let metrics = Value::Object(metrics);
    write_json(&out.join("metrics.json"), &metrics)?;
    if let Some(h) = &history {
        let mut csv = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for e in &h.epochs {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                cell(e.val_loss),
                cell(e.val_accuracy)
            ));
        }
        write_text(&out.join("history.csv"), &csv)?;
        let series = |f: &dyn Fn(&marsdust::classifiers::net::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
            h.epochs.iter().filter_map(|e| f(e).map(|v| (e.epoch as f64, v))).collect()
        };
        plot::line_chart(
            &out.join("loss.png"),
            &[series(&|e| Some(e.train_loss)), series(&|e| e.val_loss)],
        )?;
        plot::line_chart(
            &out.join("accuracy.png"),
            &[
                series(&|e| Some(e.train_accuracy)),
                series(&|e| e.val_accuracy),
            ],
        )?;
    }
    let mut meta = ModelMeta::new(clf.architecture(), seed);
    if history.is_some() {
        meta.hyper = Some(hyper);
    }
    meta.history = history;
    meta.metrics = metrics;
    clf.save(&out, meta)?;
    let args = args_value(&[
        ("model", json!(model_name(a.model))),
        ("out", path_value(&out)),
        ("weights", opt_path_value(a.weights.as_ref())),
    ]);
    write_resolved(&out, "train", args, &cfg)?;
    println!("{}", out.display());
    Ok(0)
}

fn eval(a: &EvalArgs, cfg: RunConfig) -> Result<u8> {
    let split = parse_split(&a.split)?;
    let (mut clf, meta) = TrainedClassifier::load(&a.model_dir)?;
    let data = prepare_split(&dataset(&cfg)?, split, meta.seed)?;
    if data.is_empty() {
        bail!("the {} split is empty", split.as_str());
    }
    let (report, proba) = score(&mut clf, &data)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.model_dir.join(format!("eval-{}", split.as_str())));
    create_dir(&out)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_confusion(&out, "confusion", &report)?;
    let mut csv = String::from("image,label,p_dusty\n");
    for ((p, code), pr) in data.iter().zip(&proba) {
        csv.push_str(&format!("{},{code},{pr}\n", p.id));
    }
    write_text(&out.join("predictions.csv"), &csv)?;
    println!("{}", report.table());
    let args = args_value(&[
        ("model_dir", path_value(&a.model_dir)),
        ("split", json!(split.as_str())),
        ("out", path_value(&out)),
    ]);
    write_resolved(&out, "eval", args, &cfg)?;
    Ok(0)
}

fn filter(a: &FilterArgs, cfg: RunConfig) -> Result<u8> {
    if a.batch == 0 {
        return Err(usage("--batch must be at least 1"));
    }
    if !a.input.is_dir() {
        bail!("input folder {} does not exist", a.input.display());
    }
    ensure_parent(&a.out)?;
    let options = FilterOptions {
        batch: a.batch,
        created_at: None,
    };
    let m = run_filter_dir(&a.input, &a.model_dir, &a.out, &options)?;
    let args = args_value(&[
        ("in", path_value(&a.input)),
        ("model_dir", path_value(&a.model_dir)),
        ("out", path_value(&a.out)),
        ("batch", json!(a.batch)),
    ]);
    write_sidecar(&a.out, "filter", args, &cfg)?;
    println!(
        "dusty {} / not dusty {} / skipped {}",
        m.n_dusty, m.n_not_dusty, m.n_skipped
    );
    if m.n_dusty + m.n_not_dusty == 0 {
        warn!("no image in {} could be classified", a.input.display());
        return Ok(2);
    }
    if m.n_skipped > 0 {
        warn!("{} files skipped; see the archive manifest", m.n_skipped);
        return Ok(2);
    }
    Ok(0)
}

fn sweep_summary(point: &SweepPoint) -> Value {
    json!({
        "level": point.level,
        "restored": point.restored,
        "noisy": point.noisy,
    })
}

fn train_ae(a: &TrainAeArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = &a.variant {
        cfg.autoencoder.variant = v.parse::<AeVariant>().map_err(|e| usage(e.to_string()))?;
    }
    if let Some(w) = a.width {
        cfg.autoencoder.width = w;
    }
    if let Some(e) = a.epochs {
        cfg.autoencoder.train.epochs = e;
    }
    let seed = cfg.seed;
    let ae = cfg.autoencoder.clone();
    let out = run_dir(&cfg, a.out.as_ref(), &format!("ae-{}", ae.variant.as_str()));
    let clean = clean_patches(&cfg, a.clean.as_ref(), Split::Train)?;
    let (train, hold) = holdout(clean, ae.holdout_fraction, derive_seed(seed, 0))?;
    let pairs: Vec<(ImagePatch, ImagePatch)> = make_noisy_dataset(
        &train,
        a.noise_level,
        cfg.noise.low_fraction,
        derive_seed(seed, 1),
    )?
    .into_iter()
    .map(|p| (p.noisy, p.clean))
    .collect();
    info!("{} training pairs, {} held out", pairs.len(), hold.len());
    let mut model = Autoencoder::new(ae.variant, ae.width, seed)?;
    let history = train_denoiser(&mut model, &pairs, &ae.train, seed)?;
    create_dir(&out)?;
    let mut meta = AeMeta::new(&model, seed, ae.train.clone());
    meta.noise_level = Some(a.noise_level);
    meta.denoising_history = Some(history.clone());
    save_autoencoder(&mut model, &meta, &out)?;
    let mut csv = String::from("epoch,loss\n");
    for e in &history.epochs {
        csv.push_str(&format!("{},{}\n", e.epoch, e.loss));
    }
    write_text(&out.join("history.csv"), &csv)?;
    plot::line_chart(
        &out.join("loss.png"),
        &[history
            .epochs
            .iter()
            .map(|e| (e.epoch as f64, e.loss))
            .collect()],
    )?;
    if !hold.is_empty() {
        let side = ae.variant.input_side();
        let points = noise_sweep(
            |x| denoise(&mut model, x),
            &hold,
            side,
            &[a.noise_level],
            cfg.noise.low_fraction,
            derive_seed(seed, 2),
            &MetricParams::default(),
        )?;
        info!(
            "held-out SSIM {:.4} restored vs {:.4} noisy",
            points[0].restored.mean_ssim, points[0].noisy.mean_ssim
        );
        write_json(&out.join("eval.json"), &sweep_summary(&points[0]))?;
    }
    let args = args_value(&[
        ("variant", json!(ae.variant.as_str())),
        ("noise_level", json!(a.noise_level)),
        ("clean", opt_path_value(a.clean.as_ref())),
        ("out", path_value(&out)),
    ]);
    write_resolved(&out, "train-ae", args, &cfg)?;
    println!("{}", out.display());
    Ok(0)
}

fn train_pix2pix_cmd(a: &TrainPix2pixArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.pix2pix.epochs = e;
    }
    if let Some(n) = a.ngf {
        cfg.pix2pix.ngf = n;
    }
    if let Some(n) = a.ndf {
        cfg.pix2pix.ndf = n;
    }
    cfg.pix2pix.validate().map_err(|e| usage(e.to_string()))?;
    let seed = cfg.seed;
    let out = run_dir(&cfg, a.out.as_ref(), "pix2pix");
    let clean = clean_patches(&cfg, a.clean.as_ref(), Split::Train)?;
    let (train, hold) = holdout(
        clean,
        cfg.autoencoder.holdout_fraction,
        derive_seed(seed, 0),
    )?;
    let pairs: Vec<(ImagePatch, ImagePatch)> = make_noisy_dataset(
        &train,
        a.noise_level,
        cfg.noise.low_fraction,
        derive_seed(seed, 1),
    )?
    .into_iter()
    .map(|p| (p.noisy, p.clean))
    .collect();
    info!("{} training pairs, {} held out", pairs.len(), hold.len());
    let mut model = Pix2Pix::new(cfg.pix2pix.clone(), seed)?;
    create_dir(&out)?;
    let history = train_pix2pix(&mut model, &pairs, seed, Some(&out.join("checkpoints")))?;
    let mut meta = Pix2PixMeta::new(cfg.pix2pix.clone(), seed);
    meta.noise_level = Some(a.noise_level);
    meta.run_mean = history.run_mean();
    meta.last_epoch_mean = history.last_epoch_mean();
    save_generator(&mut model.generator, &meta, &out)?;
    let mut csv = String::from("epoch,gen_total,gen_adversarial,gen_l1,disc_loss\n");
    for e in &history.epochs {
        let m = e.mean;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, m.gen_total, m.gen_adversarial, m.gen_l1, m.disc_loss
        ));
    }
    write_text(&out.join("losses.csv"), &csv)?;
    let steps = |f: &dyn Fn(&marsdust::pix2pix::GanLossRecord) -> f64| -> Vec<(f64, f64)> {
        history
            .steps
            .iter()
            .enumerate()
            .map(|(i, r)| (i as f64, f(r)))
            .collect()
    };
    plot::line_chart(
        &out.join("loss.png"),
        &[
            steps(&|r| r.gen_adversarial),
            steps(&|r| r.gen_l1),
            steps(&|r| r.disc_loss),
        ],
    )?;
    if !hold.is_empty() {
        let side = hold[0].height;
        let generator = &mut model.generator;
        let points = noise_sweep(
            |x| restore_images(generator, x),
            &hold,
            side,
            &[a.noise_level],
            cfg.noise.low_fraction,
            derive_seed(seed, 2),
            &MetricParams::default(),
        )?;
        info!(
            "held-out SSIM {:.4} restored vs {:.4} noisy",
            points[0].restored.mean_ssim, points[0].noisy.mean_ssim
        );
        write_json(&out.join("eval.json"), &sweep_summary(&points[0]))?;
    }
    let args = args_value(&[
        ("noise_level", json!(a.noise_level)),
        ("clean", opt_path_value(a.clean.as_ref())),
        ("out", path_value(&out)),
    ]);
    write_resolved(&out, "train-pix2pix", args, &cfg)?;
    println!("{}", out.display());
    Ok(0)
}

enum Denoiser {
    Ae(Autoencoder),
    Gan(marsdust::pix2pix::Generator),
}

impl Denoiser {
    fn load(dir: &Path, expected: Option<BackendArg>) -> Result<Self> {
        let path = dir.join(MODEL_JSON);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let meta: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let backend = meta.get("backend").and_then(Value::as_str).unwrap_or("");
        let wanted = expected.map(|b| match b {
            BackendArg::Autoencoder => AE_BACKEND,
            BackendArg::Pix2pix => PIX2PIX_BACKEND,
        });
        if let Some(w) = wanted {
            if w != backend {
                return Err(usage(format!(
                    "{} holds a `{backend}` model, not `{w}`",
                    dir.display()
                )));
            }
        }
        match backend {
            AE_BACKEND => Ok(Denoiser::Ae(load_autoencoder(dir)?.0)),
            PIX2PIX_BACKEND => Ok(Denoiser::Gan(load_generator(dir)?.0)),
            _ => Err(usage(format!(
                "{} is not a denoiser model directory",
                dir.display()
            ))),
        }
    }

    /// Side length images are scored at, given the clean images' own size.
    fn side(&self, native: usize) -> usize {
        match self {
            Denoiser::Ae(m) => m.variant.input_side(),
            Denoiser::Gan(_) => native,
        }
    }

    /// Restore unit images at their own size.
    fn restore(&mut self, noisy: &[NormalizedImage]) -> Result<Vec<NormalizedImage>> {
        match self {
            Denoiser::Gan(g) => Ok(restore_images(g, noisy)?),
            Denoiser::Ae(m) => {
                let side = m.variant.input_side();
                let mut out = Vec::with_capacity(noisy.len());
                for img in noisy {
                    let x = if img.dims() == (side, side) {
                        img.clone()
                    } else {
                        resize(img, (side, side), ResizeMethod::Bilinear)?
                    };
                    let y = denoise(m, std::slice::from_ref(&x))?.remove(0);
                    out.push(if img.dims() == (side, side) {
                        y
                    } else {
                        resize(&y, img.dims(), ResizeMethod::Bilinear)?
                    });
                }
                Ok(out)
            }
        }
    }
}

fn denoise_cmd(a: &DenoiseArgs, cfg: RunConfig) -> Result<u8> {
    let mut model = Denoiser::load(&a.model_dir, a.backend)?;
    let noisy = read_stack(&a.input, &["noisy"])?;
    let restored = model.restore(&to_unit(&noisy)?)?;
    let (h, w) = noisy[0].dims();
    let data: Vec<u8> = restored.iter().flat_map(denormalize).collect();
    let array = NpyArray::u8(vec![restored.len(), h, w], data)?;
    let names: Vec<&str> = noisy.iter().map(|p| p.id.as_str()).collect();
    ensure_parent(&a.out)?;
    let mut npz = NpzBuilder::new();
    npz.array("restored", &array)
        .file("names.json", serde_json::to_vec(&names)?);
    npz.write(&a.out)?;
    let args = args_value(&[
        ("model_dir", path_value(&a.model_dir)),
        ("in", path_value(&a.input)),
        ("out", path_value(&a.out)),
    ]);
    write_sidecar(&a.out, "denoise", args, &cfg)?;
    info!("restored {} images", names.len());
    Ok(0)
}

fn sweep(a: &SweepArgs, mut cfg: RunConfig) -> Result<u8> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.ratio {
        cfg.noise.low_fraction = r;
    }
    if let Some(l) = &a.levels {
        cfg.noise.levels = l.clone();
    }
    if cfg.noise.levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(usage("--levels must be in ascending order"));
    }
    let mut model = Denoiser::load(&a.model_dir, None)?;
    let clean = clean_patches(&cfg, a.input.as_ref(), Split::Test)?;
    let side = model.side(clean[0].height);
    let points = noise_sweep(
        |x| {
            model
                .restore(x)
                .map_err(|e| marsdust::Error::Model(format!("{e:#}")))
        },
        &clean,
        side,
        &cfg.noise.levels,
        cfg.noise.low_fraction,
        cfg.seed,
        &MetricParams::default(),
    )?;
    create_dir(&a.out)?;
    write_sweep_csv(&a.out.join("sweep.csv"), &points)?;
    write_json(
        &a.out.join("sweep.json"),
        &points.iter().map(sweep_summary).collect::<Vec<_>>(),
    )?;
    plot::line_chart(
        &a.out.join("sweep.png"),
        &[
            points
                .iter()
                .map(|p| (p.level, p.restored.mean_ssim))
                .collect(),
            points
                .iter()
                .map(|p| (p.level, p.noisy.mean_ssim))
                .collect(),
        ],
    )?;
    for p in &points {
        println!(
            "level {:.2}: SSIM {:.4} restored, {:.4} noisy",
            p.level, p.restored.mean_ssim, p.noisy.mean_ssim
        );
    }
    let args = args_value(&[
        ("model_dir", path_value(&a.model_dir)),
        ("in", opt_path_value(a.input.as_ref())),
        ("out", path_value(&a.out)),
    ]);
    write_resolved(&a.out, "sweep", args, &cfg)?;
    Ok(0)
}

fn metrics(a: &MetricsArgs, cfg: RunConfig) -> Result<u8> {
    let restored = read_stack(&a.restored, &["restored", "noisy"])?;
    let clean = read_stack(&a.clean, &["clean"])?;
    let ids: Vec<String> = clean.iter().map(|p| p.id.clone()).collect();
    let report = evaluate_denoiser(
        &to_unit(&restored)?,
        &to_unit(&clean)?,
        Some(&ids),
        &MetricParams::default(),
    )?;
    ensure_parent(&a.out)?;
    report.write_json(&a.out)?;
    report.write_csv(&a.out.with_extension("csv"))?;
    println!(
        "MAE {:.5}  PSNR {}  SSIM {:.4}  MS-SSIM {:.4}  ({} pairs)",
        report.mean_mae,
        report
            .mean_psnr
            .map_or_else(|| "inf".into(), |v| format!("{v:.3}")),
        report.mean_ssim,
        report.mean_msssim,
        report.n_pairs
    );
    let args = args_value(&[
        ("restored", path_value(&a.restored)),
        ("clean", path_value(&a.clean)),
        ("out", path_value(&a.out)),
    ]);
    write_sidecar(&a.out, "metrics", args, &cfg)?;
    Ok(0)
}

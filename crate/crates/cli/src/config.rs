//! Run configuration: built-in defaults, then a TOML file, then `MARSDUST_*`
//! environment overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use marsdust::autoencoder::{AeTrainConfig, AeVariant};
use marsdust::classifiers::{HeadConfig, SvmConfig, TrainHyperparams};
use marsdust::pix2pix::GanConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const ENV_PREFIX: &str = "MARSDUST_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset root; its `manifest.csv` is used unless `manifest` is set.
    pub data_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Parent folder for run directories when `--out` is not given.
    pub output_dir: PathBuf,
    /// `.npz` export of ImageNet ResNet-50 weights.
    pub resnet50_weights: Option<PathBuf>,
    pub classifier: ClassifierConfig,
    pub noise: NoiseConfig,
    pub autoencoder: AutoencoderConfig,
    pub pix2pix: GanConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data_dir: None,
            manifest: None,
            output_dir: PathBuf::from("runs"),
            resnet50_weights: None,
            classifier: ClassifierConfig::default(),
            noise: NoiseConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            pix2pix: GanConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub train: TrainHyperparams,
    pub head: HeadConfig,
    /// Unfreeze the transfer backbone.
    pub fine_tune: bool,
    pub pca_components: usize,
    /// Components kept for the SVM; the elbow point when unset.
    pub keep_components: Option<usize>,
    pub svm: SvmConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            train: TrainHyperparams::default(),
            head: HeadConfig::default(),
            fine_tune: false,
            pca_components: 10,
            keep_components: None,
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Share of noisy pixels drawn from the low band.
    pub low_fraction: f64,
    pub levels: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            low_fraction: 0.5,
            levels: vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub variant: AeVariant,
    pub width: usize,
    pub train: AeTrainConfig,
    /// Clean patches held out from training for evaluation.
    pub holdout_fraction: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            variant: AeVariant::Base100,
            width: marsdust::autoencoder::DEFAULT_WIDTH,
            train: AeTrainConfig::default(),
            holdout_fraction: 0.1,
        }
    }
}

impl RunConfig {
    pub fn manifest_path(&self) -> Result<PathBuf> {
        match (&self.manifest, &self.data_dir) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(d)) => Ok(d.join("manifest.csv")),
            (None, None) => bail!("no dataset configured; set `data_dir` or `manifest` in the config or {ENV_PREFIX}DATA_DIR"),
        }
    }
}

/// Load defaults, overlay the TOML file (if any) and the environment.
pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let vars: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    resolve(path, &vars)
}

pub fn resolve(path: Option<&Path>, env: &[(String, String)]) -> Result<RunConfig> {
    let mut merged = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        merge(&mut merged, serde_json::to_value(table)?);
    }
    for (key, raw) in env {
        apply_env(&mut merged, key, raw)?;
    }
    serde_json::from_value(merged).context("invalid configuration")
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `MARSDUST_SEED=7` sets `seed`; `MARSDUST_AUTOENCODER__TRAIN__EPOCHS=5`
/// sets `autoencoder.train.epochs`. Variables naming no known key are ignored.
fn apply_env(config: &mut Value, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = key[ENV_PREFIX.len()..]
        .split("__")
        .map(str::to_ascii_lowercase)
        .collect();
    let mut node = &mut *config;
    for (i, part) in path.iter().enumerate() {
        let Some(obj) = node.as_object_mut() else {
            return Ok(());
        };
        if !obj.contains_key(part) {
            log::debug!("ignoring {key}: no `{}` setting", path[..=i].join("."));
            return Ok(());
        }
        node = obj.get_mut(part).expect("key present");
    }
    *node =
        parse_env_value(node, raw).with_context(|| format!("environment override {key}={raw}"))?;
    Ok(())
}

fn parse_env_value(current: &Value, raw: &str) -> Result<Value> {
    Ok(match current {
        Value::String(_) | Value::Null => match serde_json::from_str::<Value>(raw) {
            Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::Array(_)))
                if !current.is_string() =>
            {
                v
            }
            _ => Value::String(raw.to_string()),
        },
        _ => serde_json::from_str(raw)?,
    })
}

/// Everything needed to repeat a run: the subcommand, its arguments and the
/// fully resolved configuration.
#[derive(Debug, Serialize)]
pub struct ResolvedRun<'a> {
    pub command: &'a str,
    pub args: Value,
    pub config: &'a RunConfig,
    pub version: &'static str,
}

pub fn write_resolved(dir: &Path, command: &str, args: Value, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let record = ResolvedRun {
        command,
        args,
        config,
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = dir.join("config_resolved.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn args_value(pairs: &[(&str, Value)]) -> Value {
    Value::Object(
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect::<Map<_, _>>(),
    )
}

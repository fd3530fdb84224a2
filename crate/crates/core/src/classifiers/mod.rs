//! Dusty / not-dusty classifiers behind one prediction and persistence
//! interface.

pub mod net;
pub mod pca;
pub mod report;
pub mod resnet;
pub mod svm;

use std::collections::HashMap;
use std::path::Path;

use marsdust_nn::{snapshot, Layer, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use net::{
    build_cnn, build_transfer_model, train_classifier, EpochRecord, HeadConfig, InputSpec,
    NetClassifier, TrainHistory, TrainHyperparams, TransferModel,
};
pub use pca::{elbow_point, fit_pca, FeatureMatrix, PcaModel};
pub use report::{evaluate, ClassMetrics, EvalReport};
pub use svm::{fit_svm, Gamma, SvmConfig, SvmModel};

use crate::dataset::ImagePatch;
use crate::error::{Error, Result};
use crate::npy::{NpyArray, NpyData};
use crate::npz::{NpzArchive, NpzBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    PcaSvm,
    Cnn,
    TransferResnet50,
    ContrastStub,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::PcaSvm => "pca_svm",
            Architecture::Cnn => "cnn",
            Architecture::TransferResnet50 => "transfer_resnet50",
            Architecture::ContrastStub => "contrast_stub",
        }
    }
}

/// PCA projection followed by an RBF SVM on the leading components.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaSvmClassifier {
    pub pca: PcaModel,
    pub n_components: usize,
    pub svm: SvmModel,
}

impl PcaSvmClassifier {
    /// Fit PCA with `fit_components` components, keep `keep` of them (the
    /// elbow point when `None`), then fit the SVM on the projections.
    pub fn fit(
        train: &[(ImagePatch, u8)],
        fit_components: usize,
        keep: Option<usize>,
        config: &SvmConfig,
    ) -> Result<Self> {
        let patches: Vec<&ImagePatch> = train.iter().map(|(p, _)| p).collect();
        let x = FeatureMatrix::from_patches(&patches)?;
        let pca = fit_pca(&x, fit_components)?;
        let n_components = match keep {
            Some(k) if k >= 1 && k <= fit_components => k,
            Some(k) => {
                return Err(Error::invalid(format!(
                    "cannot keep {k} of {fit_components} components"
                )))
            }
            None => elbow_point(&pca.explained_variance_ratio)?,
        };
        let features = (0..x.n)
            .map(|i| pca.transform(x.row(i), n_components))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<u8> = train.iter().map(|(_, l)| *l).collect();
        let svm = fit_svm(&features, &labels, config)?;
        Ok(Self {
            pca,
            n_components,
            svm,
        })
    }

    pub fn features(&self, patch: &ImagePatch) -> Result<Vec<f64>> {
        let x: Vec<f32> = patch.pixels.iter().map(|&v| v as f32 / 255.0).collect();
        self.pca.transform(&x, self.n_components)
    }
}

/// Deterministic stand-in classifier: low-contrast patches are called dusty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastStub {
    /// Unit-scale pixel standard deviation at which p(dusty) = 0.5.
    pub threshold: f64,
    pub scale: f64,
}

impl Default for ContrastStub {
    fn default() -> Self {
        Self {
            threshold: 0.12,
            scale: 0.02,
        }
    }
}

pub fn contrast(patch: &ImagePatch) -> f64 {
    let n = patch.pixels.len().max(1) as f64;
    let mean = patch.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = patch
        .pixels
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt() / 255.0
}

impl ContrastStub {
    /// Threshold halfway between the two classes' mean contrast.
    pub fn fit(train: &[(ImagePatch, u8)]) -> Result<Self> {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (p, l) in train {
            let l = (*l).min(1) as usize;
            sums[l] += contrast(p);
            counts[l] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::invalid("contrast stub needs both classes"));
        }
        let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
        Ok(Self {
            threshold: (means[0] + means[1]) / 2.0,
            scale: ((means[0] - means[1]).abs() / 8.0).max(1e-4),
        })
    }

    pub fn probability(&self, patch: &ImagePatch) -> f64 {
        1.0 / (1.0 + (-(self.threshold - contrast(patch)) / self.scale).exp())
    }
}

pub enum TrainedClassifier {
    PcaSvm(PcaSvmClassifier),
    Net {
        architecture: Architecture,
        model: NetClassifier,
        head: Option<HeadConfig>,
    },
    Stub(ContrastStub),
}

/// Contents of `model.json` in a model directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub architecture: Architecture,
    pub seed: u64,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub head: Option<HeadConfig>,
    #[serde(default)]
    pub hyper: Option<TrainHyperparams>,
    #[serde(default)]
    pub history: Option<TrainHistory>,
    #[serde(default)]
    pub svm: Option<SvmSummary>,
    #[serde(default)]
    pub stub: Option<ContrastStub>,
    #[serde(default)]
    pub metrics: serde_json::Value,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmSummary {
    pub c: f64,
    pub gamma: f64,
    pub rho: f64,
    pub n_support: usize,
    pub iterations: usize,
    pub converged: bool,
    pub n_components: usize,
    pub explained_variance_ratio: Vec<f64>,
}

impl ModelMeta {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        Self {
            architecture,
            seed,
            input: None,
            head: None,
            hyper: None,
            history: None,
            svm: None,
            stub: None,
            metrics: serde_json::Value::Null,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub const MODEL_JSON: &str = "model.json";
pub const WEIGHTS_NPZ: &str = "weights.npz";

fn f64_array(shape: Vec<usize>, data: Vec<f64>) -> Result<NpyArray> {
    NpyArray::new(shape, NpyData::F64(data))
}

fn read_f64(archive: &NpzArchive, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let a = archive.array(name)?;
    let data = match a.data {
        NpyData::F64(v) => v,
        _ => a.to_f32_vec().into_iter().map(f64::from).collect(),
    };
    Ok((a.shape, data))
}

impl TrainedClassifier {
    pub fn architecture(&self) -> Architecture {
        match self {
            TrainedClassifier::PcaSvm(_) => Architecture::PcaSvm,
            TrainedClassifier::Net { architecture, .. } => *architecture,
            TrainedClassifier::Stub(_) => Architecture::ContrastStub,
        }
    }

    /// Probability of the dusty class for each patch.
    pub fn predict_proba(&mut self, patches: &[&ImagePatch]) -> Result<Vec<f64>> {
        match self {
            TrainedClassifier::PcaSvm(m) => patches
                .iter()
                .map(|p| m.features(p).map(|f| m.svm.probability(&f)))
                .collect(),
            TrainedClassifier::Net { model, .. } => Ok(model
                .class_probabilities(patches)?
                .into_iter()
                .map(|p| p[1])
                .collect()),
            TrainedClassifier::Stub(s) => Ok(patches.iter().map(|p| s.probability(p)).collect()),
        }
    }

    /// Label codes: 1 (dusty) when p(dusty) >= 0.5.
    pub fn predict(&mut self, patches: &[&ImagePatch]) -> Result<Vec<u8>> {
        match self {
            TrainedClassifier::PcaSvm(m) => patches
                .iter()
                .map(|p| m.features(p).map(|f| m.svm.predict(&f)))
                .collect(),
            TrainedClassifier::Net { model, .. } => Ok(model
                .class_probabilities(patches)?
                .into_iter()
                .map(|p| u8::from(p[1] >= 0.5))
                .collect()),
            TrainedClassifier::Stub(s) => Ok(patches
                .iter()
                .map(|p| u8::from(s.probability(p) >= 0.5))
                .collect()),
        }
    }

    /// Input size patches are resized to, when the model has one.
    pub fn input_dims(&self) -> Option<(usize, usize)> {
        match self {
            TrainedClassifier::PcaSvm(m) => {
                let d = m.pca.n_features();
                let side = (d as f64).sqrt() as usize;
                (side * side == d).then_some((side, side))
            }
            TrainedClassifier::Net { model, .. } => Some((model.input.height, model.input.width)),
            TrainedClassifier::Stub(_) => None,
        }
    }

    /// Write `model.json` and `weights.npz` into `dir`. Architecture-specific
    /// fields of `meta` are filled in here.
    pub fn save(&mut self, dir: &Path, mut meta: ModelMeta) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        meta.architecture = self.architecture();
        let weights = match self {
            TrainedClassifier::PcaSvm(m) => {
                let d = m.pca.n_features();
                let k = m.pca.n_components();
                let nsv = m.svm.support_vectors.len();
                meta.svm = Some(SvmSummary {
                    c: m.svm.c,
                    gamma: m.svm.gamma,
                    rho: m.svm.rho,
                    n_support: nsv,
                    iterations: m.svm.iterations,
                    converged: m.svm.converged,
                    n_components: m.n_components,
                    explained_variance_ratio: m.pca.explained_variance_ratio.clone(),
                });
                let mut b = NpzBuilder::new();
                b.array("pca.mean", &f64_array(vec![d], m.pca.mean.clone())?)
                    .array(
                        "pca.components",
                        &f64_array(vec![k, d], m.pca.components.concat())?,
                    )
                    .array(
                        "pca.explained_variance",
                        &f64_array(vec![k], m.pca.explained_variance.clone())?,
                    )
                    .array(
                        "pca.total_variance",
                        &f64_array(vec![2], vec![m.pca.total_variance, m.pca.n_samples as f64])?,
                    )
                    .array(
                        "svm.support_vectors",
                        &f64_array(vec![nsv, m.n_components], m.svm.support_vectors.concat())?,
                    )
                    .array(
                        "svm.dual_coef",
                        &f64_array(vec![nsv], m.svm.dual_coef.clone())?,
                    );
                b
            }
            TrainedClassifier::Net { model, head, .. } => {
                meta.input = Some(model.input.clone());
                meta.head = head.clone();
                crate::weights::to_npz(model.net.as_mut())?
            }
            TrainedClassifier::Stub(s) => {
                meta.stub = Some(*s);
                NpzBuilder::new()
            }
        };
        weights.write(&dir.join(WEIGHTS_NPZ))?;
        let path = dir.join(MODEL_JSON);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, ModelMeta)> {
        let path = dir.join(MODEL_JSON);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        let archive = NpzArchive::read(&dir.join(WEIGHTS_NPZ))?;
        let model = match meta.architecture {
            Architecture::PcaSvm => {
                let s = meta
                    .svm
                    .clone()
                    .ok_or_else(|| Error::Model("pca_svm model lacks its svm section".into()))?;
                let (mshape, mean) = read_f64(&archive, "pca.mean")?;
                let (cshape, comps) = read_f64(&archive, "pca.components")?;
                let (_, var) = read_f64(&archive, "pca.explained_variance")?;
                let (_, tot) = read_f64(&archive, "pca.total_variance")?;
                let (svshape, sv) = read_f64(&archive, "svm.support_vectors")?;
                let (_, dual) = read_f64(&archive, "svm.dual_coef")?;
                let d = mshape[0];
                if cshape.len() != 2 || cshape[1] != d || svshape.len() != 2 {
                    return Err(Error::Model("inconsistent pca/svm array shapes".into()));
                }
                let width = svshape[1].max(1);
                let pca = PcaModel {
                    mean,
                    components: comps.chunks(d.max(1)).map(<[f64]>::to_vec).collect(),
                    explained_variance: var,
                    explained_variance_ratio: s.explained_variance_ratio.clone(),
                    total_variance: tot[0],
                    n_samples: tot[1] as usize,
                };
                let svm = SvmModel {
                    support_vectors: sv.chunks(width).map(<[f64]>::to_vec).collect(),
                    dual_coef: dual,
                    rho: s.rho,
                    gamma: s.gamma,
                    c: s.c,
                    iterations: s.iterations,
                    converged: s.converged,
                };
                TrainedClassifier::PcaSvm(PcaSvmClassifier {
                    pca,
                    n_components: s.n_components,
                    svm,
                })
            }
            Architecture::Cnn => {
                let mut net = build_cnn(meta.seed);
                crate::weights::load_from(&mut net, &archive)?;
                TrainedClassifier::Net {
                    architecture: Architecture::Cnn,
                    model: NetClassifier::new(
                        meta.input.clone().unwrap_or_else(InputSpec::cnn),
                        Box::new(net),
                    ),
                    head: None,
                }
            }
            Architecture::TransferResnet50 => {
                let head = meta.head.clone().unwrap_or_default();
                let input = meta
                    .input
                    .clone()
                    .ok_or_else(|| Error::Model("transfer model lacks its input spec".into()))?;
                let backbone = resnet::ResNet50::new(&mut ChaCha8Rng::seed_from_u64(meta.seed));
                let mut net = TransferModel::new(backbone, &head, meta.seed);
                crate::weights::load_from(&mut net, &archive)?;
                TrainedClassifier::Net {
                    architecture: Architecture::TransferResnet50,
                    model: NetClassifier::new(input, Box::new(net)),
                    head: Some(head),
                }
            }
            Architecture::ContrastStub => TrainedClassifier::Stub(meta.stub.unwrap_or_default()),
        };
        Ok((model, meta))
    }
}

/// Named parameter values, for before/after comparisons.
pub fn parameter_map(layer: &mut dyn Layer, prefix: &str) -> HashMap<String, Tensor> {
    snapshot(layer, prefix).into_iter().collect()
}

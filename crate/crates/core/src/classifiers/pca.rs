use marsdust_nn::gemm::{sgemm, Mat};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::ImagePatch;
use crate::error::{Error, Result};

/// Dense row-major sample matrix (`n` samples by `d` features).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape(format!(
                "{n}x{d} matrix needs {} values, got {}",
                n * d,
                data.len()
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::shape(format!(
                "row {i} has {} features, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// Flattened unit-scale pixels, one row per patch.
    pub fn from_patches(patches: &[&ImagePatch]) -> Result<Self> {
        let d = patches.first().map_or(0, |p| p.pixels.len());
        let mut data = Vec::with_capacity(patches.len() * d);
        for p in patches {
            if p.pixels.len() != d {
                return Err(Error::shape(format!(
                    "patch {} has {} pixels, expected {d}",
                    p.id,
                    p.pixels.len()
                )));
            }
            data.extend(p.pixels.iter().map(|&v| v as f32 / 255.0));
        }
        Self::new(patches.len(), d, data)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaSolver {
    /// Exact eigendecomposition of the covariance or Gram matrix.
    Exact,
    /// Randomized block subspace iteration with Rayleigh-Ritz extraction.
    Subspace {
        oversample: usize,
        iterations: usize,
        seed: u64,
    },
    /// Exact when the smaller matrix dimension allows it, otherwise subspace.
    Auto,
}

/// Largest covariance/Gram side solved exactly under `PcaSolver::Auto`.
const EXACT_LIMIT: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub total_variance: f64,
    pub n_samples: usize,
}

pub fn fit_pca(x: &FeatureMatrix, n_components: usize) -> Result<PcaModel> {
    fit_pca_with(x, n_components, PcaSolver::Auto)
}

pub fn fit_pca_with(x: &FeatureMatrix, n_components: usize, solver: PcaSolver) -> Result<PcaModel> {
    let (n, d) = (x.n, x.d);
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::invalid(format!(
            "{n_components} components requested from {n} samples of {d} features"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    let mut mean = vec![0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let solver = match solver {
        PcaSolver::Auto if n.min(d) <= EXACT_LIMIT => PcaSolver::Exact,
        PcaSolver::Auto => PcaSolver::Subspace {
            oversample: 10,
            iterations: 6,
            seed: 0,
        },
        s => s,
    };
    let denom = (n - 1) as f64;
    let (values, vectors, total) = match solver {
        PcaSolver::Exact => {
            let c = DMatrix::from_fn(n, d, |i, j| x.data[i * d + j] as f64 - mean[j]);
            let total = c.iter().map(|v| v * v).sum::<f64>() / denom;
            if d <= n {
                let cov = c.transpose() * &c / denom;
                let (vals, vecs) = sorted_eigen(cov);
                (vals, vecs, total)
            } else {
                // eigenvectors of C C^T map to those of C^T C through C^T u / |C^T u|
                let gram = &c * c.transpose() / denom;
                let (vals, u) = sorted_eigen(gram);
                let mut v = c.transpose() * u;
                for mut col in v.column_iter_mut() {
                    let norm = col.norm();
                    if norm > 0.0 {
                        col /= norm;
                    }
                }
                (vals, v, total)
            }
        }
        PcaSolver::Subspace {
            oversample,
            iterations,
            seed,
        } => subspace(x, &mean, n_components + oversample, iterations, seed)?,
        PcaSolver::Auto => unreachable!(),
    };

    let k = n_components;
    let explained_variance: Vec<f64> = values[..k].iter().map(|v| v.max(0.0)).collect();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let components = (0..k)
        .map(|j| vectors.column(j).iter().copied().collect())
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        total_variance: total,
        n_samples: n,
    })
}

/// Eigenpairs of a symmetric matrix by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Centered product `(X - 1 mean^T) B` for a `d x l` basis `B`.
fn centered_times(x: &FeatureMatrix, mean: &[f64], basis: &DMatrix<f64>) -> DMatrix<f64> {
    let l = basis.ncols();
    let b32: Vec<f32> = (0..x.d)
        .flat_map(|r| (0..l).map(move |c| (r, c)))
        .map(|(r, c)| basis[(r, c)] as f32)
        .collect();
    let mut out = vec![0f32; x.n * l];
    sgemm(
        1.0,
        Mat::new(&x.data, x.n, x.d),
        Mat::new(&b32, x.d, l),
        0.0,
        &mut out,
    );
    let shift: Vec<f64> = (0..l)
        .map(|c| (0..x.d).map(|r| mean[r] * basis[(r, c)]).sum())
        .collect();
    DMatrix::from_fn(x.n, l, |r, c| out[r * l + c] as f64 - shift[c])
}

/// Centered transpose product `(X - 1 mean^T)^T Q` for an `n x l` matrix `Q`.
fn centered_t_times(x: &FeatureMatrix, mean: &[f64], q: &DMatrix<f64>) -> DMatrix<f64> {
    let l = q.ncols();
    let q32: Vec<f32> = (0..x.n)
        .flat_map(|r| (0..l).map(move |c| (r, c)))
        .map(|(r, c)| q[(r, c)] as f32)
        .collect();
    let mut out = vec![0f32; x.d * l];
    sgemm(
        1.0,
        Mat::new(&x.data, x.n, x.d).t(),
        Mat::new(&q32, x.n, l),
        0.0,
        &mut out,
    );
    let col_sums: Vec<f64> = (0..l).map(|c| q.column(c).sum()).collect();
    DMatrix::from_fn(x.d, l, |r, c| out[r * l + c] as f64 - mean[r] * col_sums[c])
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn subspace(
    x: &FeatureMatrix,
    mean: &[f64],
    block: usize,
    iterations: usize,
    seed: u64,
) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let l = block.min(x.n.min(x.d));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(x.d, l, |_, _| StandardNormal.sample(&mut rng));
    let mut z = orthonormalize(omega);
    for _ in 0..iterations {
        let q = orthonormalize(centered_times(x, mean, &z));
        z = orthonormalize(centered_t_times(x, mean, &q));
    }
    let denom = (x.n - 1) as f64;
    let w = centered_times(x, mean, &z);
    let small = w.transpose() * &w / denom;
    let (vals, u) = sorted_eigen(small);
    let vectors = z * u;
    let mut total = 0.0;
    for i in 0..x.n {
        total += x
            .row(i)
            .iter()
            .zip(mean)
            .map(|(v, m)| (*v as f64 - m).powi(2))
            .sum::<f64>();
    }
    Ok((vals, vectors, total / denom))
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Scores on the first `k` components.
    pub fn transform(&self, x: &[f32], k: usize) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(Error::shape(format!(
                "{} features, PCA expects {}",
                x.len(),
                self.n_features()
            )));
        }
        if k > self.n_components() {
            return Err(Error::invalid(format!(
                "{k} components requested, model has {}",
                self.n_components()
            )));
        }
        Ok(self.components[..k]
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((c, v), m)| c * (*v as f64 - m))
                    .sum()
            })
            .collect())
    }

    pub fn inverse_transform(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += s * v;
            }
        }
        out
    }

    /// Mean squared reconstruction error per sample using `k` components.
    pub fn reconstruction_error(&self, x: &FeatureMatrix, k: usize) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..x.n {
            let row = x.row(i);
            let back = self.inverse_transform(&self.transform(row, k)?);
            total += row
                .iter()
                .zip(&back)
                .map(|(a, b)| (*a as f64 - b).powi(2))
                .sum::<f64>();
        }
        Ok(total / x.n.max(1) as f64)
    }
}

/// 1-based index of the point furthest from the chord joining the first and
/// last points of the curve `(i, ratios[i-1])`. Ties go to the smaller index.
pub fn elbow_point(ratios: &[f64]) -> Result<usize> {
    let k = ratios.len();
    if k < 3 {
        return Err(Error::invalid(format!(
            "elbow needs at least 3 ratios, got {k}"
        )));
    }
    let (x1, y1) = (1.0, ratios[0]);
    let (x2, y2) = (k as f64, ratios[k - 1]);
    let (dx, dy) = (x2 - x1, y2 - y1);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (1, 0.0);
    for (i, &r) in ratios.iter().enumerate() {
        let x = (i + 1) as f64;
        let dist = (dy * x - dx * r + x2 * y1 - y2 * x1).abs() / len;
        // distances of collinear points are rounding noise
        if dist > best.1 + 1e-12 {
            best = (i + 1, dist);
        }
    }
    Ok(best.0)
}

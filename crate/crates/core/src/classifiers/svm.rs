//! Binary C-SVM with an RBF kernel, trained by SMO with second-order working
//! set selection.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (n_features * variance of all feature values)`
    Scale,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub kernel: String,
    pub c: f64,
    pub gamma: Gamma,
    /// KKT violation tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Kernel row cache budget in bytes.
    pub cache_bytes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            kernel: "rbf".into(),
            c: 10_000.0,
            gamma: Gamma::Scale,
            tol: 1e-3,
            max_iter: 10_000_000,
            cache_bytes: 512 << 20,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if self.kernel != "rbf" {
            return Err(Error::invalid(format!(
                "unsupported kernel `{}`",
                self.kernel
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::invalid(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::invalid(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    /// Decision function is `sum dual_coef_i K(sv_i, x) - rho`.
    pub rho: f64,
    pub gamma: f64,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn scale_gamma(features: &[Vec<f64>]) -> f64 {
    let d = features.first().map_or(0, Vec::len);
    let n = (features.len() * d) as f64;
    let mean = features.iter().flatten().sum::<f64>() / n;
    let var = features
        .iter()
        .flatten()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    capacity: usize,
    rows: HashMap<usize, Arc<Vec<f64>>>,
    order: VecDeque<usize>,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64, cache_bytes: usize) -> Self {
        let per_row = (x.len() * 8).max(1);
        Self {
            x,
            gamma,
            capacity: (cache_bytes / per_row).max(2),
            rows: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        if let Some(r) = self.rows.get(&i) {
            return r.clone();
        }
        let xi = &self.x[i];
        let r: Arc<Vec<f64>> = Arc::new(self.x.iter().map(|xj| rbf(xi, xj, self.gamma)).collect());
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.rows.insert(i, r.clone());
        self.order.push_back(i);
        r
    }
}

/// Fit on features with label codes in {0, 1}; code 1 is the positive class.
pub fn fit_svm(features: &[Vec<f64>], labels: &[u8], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    let n = features.len();
    if n != labels.len() {
        return Err(Error::shape(format!(
            "{n} samples but {} labels",
            labels.len()
        )));
    }
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::shape("samples have differing feature counts"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label code {bad} is not 0 or 1")));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::invalid(
            "SVM training data must contain both classes",
        ));
    }
    let gamma = match config.gamma {
        Gamma::Scale => scale_gamma(features),
        Gamma::Value(g) => g,
    };
    let c = config.c;
    let y: Vec<f64> = labels
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    // RBF diagonal is exactly one
    let qd = vec![1.0f64; n];
    let mut kernel = KernelRows::new(features, gamma, config.cache_bytes);
    const TAU: f64 = 1e-12;

    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        // first index: maximal violation among I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 {
                !upper(alpha[t])
            } else {
                !lower(alpha[t])
            };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            converged = true;
            break;
        }
        let ki = kernel.row(i_sel);
        // second index: largest objective decrease among I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 {
                !lower(alpha[t])
            } else {
                !upper(alpha[t])
            };
            if !in_low {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = qd[i_sel] + qd[t] - 2.0 * ki[t];
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if gmax + gmax2 < config.tol || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let kj = kernel.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] - 2.0 * ki[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * ki[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            // Q_it = y_i y_t K_it
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }
    if !converged {
        log::warn!(
            "SMO stopped after {iterations} iterations without meeting tolerance {}",
            config.tol
        );
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(features[t].clone());
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmModel {
        support_vectors,
        dual_coef,
        rho,
        gamma,
        c,
        iterations,
        converged,
    })
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, a)| a * rbf(sv, x, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.decision(x) >= 0.0)
    }

    /// Logistic squashing of the decision value; not a calibrated probability,
    /// but monotone and consistent with `predict` at 0.5.
    pub fn probability(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(x)).exp())
    }
}

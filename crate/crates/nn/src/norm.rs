use crate::layer::{join, Layer, Param, Pass};
use crate::tensor::Tensor;

/// Per-channel batch normalisation over `(N, H, W)`.
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    eps: f32,
    /// Fraction of the new batch statistic mixed into the running estimate.
    momentum: f32,
    /// Normalise with the current batch statistics even outside training.
    pub batch_stats_in_eval: bool,
    cache: Option<Cache>,
}

struct Cache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize, eps: f32, momentum: f32) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], 1.0)),
            eps,
            momentum,
            batch_stats_in_eval: false,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels());
        let hw = h * w;
        let m = (n * hw) as f64;
        let use_batch = pass.train || self.batch_stats_in_eval;
        let src = x.data();
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        if use_batch {
            for ch in 0..c {
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for i in 0..n {
                    for &v in &src[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                        s += v as f64;
                        s2 += (v as f64) * (v as f64);
                    }
                }
                let mu = s / m;
                mean[ch] = mu as f32;
                var[ch] = (s2 / m - mu * mu).max(0.0) as f32;
            }
            if pass.train {
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 } as f32;
                let rm = self.running_mean.value.data_mut();
                for ch in 0..c {
                    rm[ch] = (1.0 - self.momentum) * rm[ch] + self.momentum * mean[ch];
                }
                let rv = self.running_var.value.data_mut();
                for ch in 0..c {
                    rv[ch] = (1.0 - self.momentum) * rv[ch] + self.momentum * var[ch] * unbias;
                }
            }
        } else {
            mean.copy_from_slice(self.running_mean.value.data());
            var.copy_from_slice(self.running_var.value.data());
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        {
            let xh = xhat.data_mut();
            let o = out.data_mut();
            for i in 0..n {
                for ch in 0..c {
                    let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                    for k in range {
                        let v = (src[k] - mean[ch]) * inv_std[ch];
                        xh[k] = v;
                        o[k] = gamma[ch] * v + beta[ch];
                    }
                }
            }
        }
        self.cache = pass.record.then_some(Cache {
            xhat,
            inv_std,
            batch_stats: use_batch,
        });
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self
            .cache
            .as_ref()
            .expect("batch norm backward without recorded forward");
        let (n, c, h, w) = grad_out.dims4();
        let hw = h * w;
        let m = (n * hw) as f32;
        let g = grad_out.data();
        let xh = cache.xhat.data();
        let mut sum_g = vec![0.0f32; c];
        let mut sum_gx = vec![0.0f32; c];
        for i in 0..n {
            for ch in 0..c {
                let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for k in range {
                    sum_g[ch] += g[k];
                    sum_gx[ch] += g[k] * xh[k];
                }
            }
        }
        if self.gamma.wants_grad() {
            for ch in 0..c {
                self.gamma.grad[ch] += sum_gx[ch];
            }
        }
        if self.beta.wants_grad() {
            for ch in 0..c {
                self.beta.grad[ch] += sum_g[ch];
            }
        }
        let gamma = self.gamma.value.data();
        let mut dx = Tensor::zeros(grad_out.shape());
        let d = dx.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let scale = gamma[ch] * cache.inv_std[ch];
                let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                if cache.batch_stats {
                    let mg = sum_g[ch] / m;
                    let mgx = sum_gx[ch] / m;
                    for k in range {
                        d[k] = scale * (g[k] - mg - xh[k] * mgx);
                    }
                } else {
                    for k in range {
                        d[k] = scale * g[k];
                    }
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        input.to_vec()
    }

    fn kind(&self) -> &'static str {
        "batch_norm2d"
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gemm::{sgemm, Mat};
use crate::init::Init;
use crate::layer::{join, Layer, Param, Pass};
use crate::tensor::Tensor;

/// Fully connected layer, `y = x W^T + b` with `W` of shape `[out, in]`.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, init: Init, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(init.tensor(
                &[out_features, in_features],
                in_features,
                out_features,
                rng,
            )),
            bias: Param::new(Tensor::zeros(&[out_features])),
            in_features,
            out_features,
            input: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let (n, f) = x.dims2();
        assert_eq!(
            f, self.in_features,
            "linear expected {} features, got {f}",
            self.in_features
        );
        let mut out = Tensor::zeros(&[n, self.out_features]);
        let b = self.bias.value.data();
        for row in out.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(b);
        }
        sgemm(
            1.0,
            Mat::new(x.data(), n, f),
            Mat::new(self.weight.value.data(), self.out_features, f).t(),
            1.0,
            out.data_mut(),
        );
        self.input = pass.record.then(|| x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .input
            .as_ref()
            .expect("linear backward without recorded forward");
        let (n, f) = x.dims2();
        let go = Mat::new(grad_out.data(), n, self.out_features);
        if self.weight.wants_grad() {
            sgemm(
                1.0,
                go.t(),
                Mat::new(x.data(), n, f),
                1.0,
                &mut self.weight.grad,
            );
        }
        if self.bias.wants_grad() {
            for row in grad_out.data().chunks(self.out_features) {
                for (g, v) in self.bias.grad.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut dx = Tensor::zeros(&[n, f]);
        sgemm(
            1.0,
            go,
            Mat::new(self.weight.value.data(), self.out_features, f),
            0.0,
            dx.data_mut(),
        );
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        vec![input[0], self.out_features]
    }

    fn kind(&self) -> &'static str {
        "linear"
    }
}

/// Collapse every non-batch axis into one feature axis.
#[derive(Default)]
pub struct Flatten {
    in_shape: Vec<usize>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Tensor, _pass: Pass) -> Tensor {
        self.in_shape = x.shape().to_vec();
        let n = x.shape()[0];
        x.clone().reshape(&[n, x.len() / n.max(1)])
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        grad_out.clone().reshape(&self.in_shape)
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        vec![input[0], input[1..].iter().product()]
    }

    fn kind(&self) -> &'static str {
        "flatten"
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` in training.
pub struct Dropout {
    rate: f32,
    rng: ChaCha8Rng,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        if !pass.train || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.len())
            .map(|_| {
                if self.rng.random::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let mut out = x.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        match &self.mask {
            None => grad_out.clone(),
            Some(mask) => {
                let mut dx = grad_out.clone();
                for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                dx
            }
        }
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        input.to_vec()
    }

    fn kind(&self) -> &'static str {
        "dropout"
    }
}

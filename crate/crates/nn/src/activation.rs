use crate::layer::{Layer, Pass};
use crate::tensor::Tensor;

/// Element-wise activation functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub struct ActivationLayer {
    act: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl ActivationLayer {
    pub fn new(act: Activation) -> Self {
        Self { act, cache: None }
    }
}

impl Layer for ActivationLayer {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let act = self.act;
        let y = x.map(|v| act.apply(v));
        self.cache = pass.record.then(|| (x.clone(), y.clone()));
        y
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (x, y) = self
            .cache
            .as_ref()
            .expect("activation backward without recorded forward");
        let mut dx = grad_out.clone();
        for ((g, &xv), &yv) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            *g *= self.act.derivative(xv, yv);
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        input.to_vec()
    }

    fn kind(&self) -> &'static str {
        match self.act {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

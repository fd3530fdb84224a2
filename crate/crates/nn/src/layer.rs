use crate::tensor::Tensor;

/// How a forward pass should behave.
///
/// `train` selects batch statistics and active dropout; `record` keeps the
/// activations a later `backward` call needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pass {
    pub train: bool,
    pub record: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass {
        train: true,
        record: true,
    };
    pub const EVAL: Pass = Pass {
        train: false,
        record: true,
    };
    pub const INFER: Pass = Pass {
        train: false,
        record: false,
    };
}

/// A learnable tensor (or a persistent buffer such as batch-norm running stats).
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f32>,
    pub trainable: bool,
    /// Buffers are saved with the weights but never touched by optimizers.
    pub buffer: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            trainable: true,
            buffer: false,
        }
    }

    pub fn buffer(value: Tensor) -> Self {
        Self {
            grad: Vec::new(),
            trainable: false,
            buffer: true,
            value,
        }
    }

    pub fn wants_grad(&self) -> bool {
        self.trainable && !self.buffer
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Sliding-window geometry of a layer, used for receptive-field arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub trait Layer: Send {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor;

    /// Propagate `grad_out` (dLoss/dOutput of the last recorded forward),
    /// accumulating parameter gradients, and return dLoss/dInput.
    fn backward(&mut self, grad_out: &Tensor) -> Tensor;

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param)) {}

    fn output_shape(&self, input: &[usize]) -> Vec<usize>;

    fn window(&self) -> Option<Window> {
        None
    }

    fn kind(&self) -> &'static str;
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn zero_grad(layer: &mut dyn Layer) {
    layer.visit_params("", &mut |_, p| p.zero_grad());
}

/// Mark every non-buffer parameter as (non-)trainable.
pub fn set_trainable(layer: &mut dyn Layer, trainable: bool) {
    layer.visit_params("", &mut |_, p| {
        if !p.buffer {
            p.trainable = trainable;
            if trainable && p.grad.len() != p.value.len() {
                p.grad = vec![0.0; p.value.len()];
            }
        }
    });
}

pub fn count_params(layer: &mut dyn Layer, trainable_only: bool) -> usize {
    let mut n = 0;
    layer.visit_params("", &mut |_, p| {
        if !p.buffer && (!trainable_only || p.trainable) {
            n += p.value.len();
        }
    });
    n
}

/// Named copy of every parameter and buffer value.
pub fn snapshot(layer: &mut dyn Layer, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    layer.visit_params(prefix, &mut |name, p| {
        out.push((name.to_string(), p.value.clone()))
    });
    out
}

/// Overwrite parameters from named tensors; fails on the first missing or
/// mis-shaped entry.
pub fn load_named(
    layer: &mut dyn Layer,
    prefix: &str,
    lookup: &dyn Fn(&str) -> Option<Tensor>,
) -> Result<(), String> {
    let mut err = None;
    layer.visit_params(prefix, &mut |name, p| {
        if err.is_some() {
            return;
        }
        match lookup(name) {
            Some(t) if t.len() == p.value.len() => {
                p.value = t.reshape(&p.value.shape().to_vec());
            }
            Some(t) => {
                err = Some(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    p.value.shape(),
                    t.shape()
                ))
            }
            None => err = Some(format!("parameter {name} missing")),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

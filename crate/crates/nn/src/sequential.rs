use crate::layer::{join, Layer, Param, Pass, Window};
use crate::tensor::Tensor;

/// Ordered chain of layers.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn with(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    /// Output shape after every layer, starting from `input`.
    pub fn shape_walk(&self, input: &[usize]) -> Vec<(&'static str, Vec<usize>)> {
        let mut shape = input.to_vec();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape);
                (l.kind(), shape.clone())
            })
            .collect()
    }

    /// Windows of the spatial layers, in order.
    pub fn windows(&self) -> Vec<Window> {
        self.layers.iter().filter_map(|l| l.window()).collect()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut h = first.forward(x, pass);
        for layer in iter {
            h = layer.forward(&h, pass);
        }
        h
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        self.layers
            .iter()
            .fold(input.to_vec(), |s, l| l.output_shape(&s))
    }

    fn kind(&self) -> &'static str {
        "sequential"
    }
}

/// Receptive field and jump (input-pixel distance between adjacent output
/// units) of a stack of windows.
pub fn receptive_field(windows: &[Window]) -> (usize, usize) {
    windows.iter().fold((1, 1), |(rf, jump), w| {
        (rf + (w.kernel - 1) * jump, jump * w.stride)
    })
}

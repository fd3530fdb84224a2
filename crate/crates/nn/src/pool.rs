use crate::gemm::conv_out;
use crate::layer::{Layer, Pass, Window};
use crate::tensor::Tensor;

/// Max pooling; padded positions never win. Output sizes use floor division.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    argmax: Vec<u32>,
    in_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            argmax: Vec::new(),
            in_shape: Vec::new(),
        }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let oh = conv_out(h, self.kernel, self.stride, self.padding);
        let ow = conv_out(w, self.kernel, self.stride, self.padding);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let record = pass.record;
        if record {
            self.argmax.clear();
            self.argmax.reserve(n * c * oh * ow);
            self.in_shape = x.shape().to_vec();
        }
        let p = self.padding as isize;
        let src = x.data();
        let dst = out.data_mut();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ki in 0..self.kernel {
                        let ih = (i * self.stride) as isize - p + ki as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let iw = (j * self.stride) as isize - p + kj as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = base + ih as usize * w + iw as usize;
                            if src[idx] > best || best == f32::NEG_INFINITY {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    dst[o] = best;
                    if record {
                        self.argmax.push(best_idx as u32);
                    }
                    o += 1;
                }
            }
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(&self.in_shape);
        let d = dx.data_mut();
        for (g, &idx) in grad_out.data().iter().zip(&self.argmax) {
            d[idx as usize] += g;
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        vec![
            input[0],
            input[1],
            conv_out(input[2], self.kernel, self.stride, self.padding),
            conv_out(input[3], self.kernel, self.stride, self.padding),
        ]
    }

    fn window(&self) -> Option<Window> {
        Some(Window {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        })
    }

    fn kind(&self) -> &'static str {
        "max_pool2d"
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub struct Upsample2d {
    factor: usize,
    in_shape: Vec<usize>,
}

impl Upsample2d {
    pub fn new(factor: usize) -> Self {
        Self {
            factor,
            in_shape: Vec::new(),
        }
    }
}

impl Layer for Upsample2d {
    fn forward(&mut self, x: &Tensor, _pass: Pass) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            for i in 0..oh {
                let srow = &src[plane * h * w + (i / f) * w..plane * h * w + (i / f + 1) * w];
                let drow = &mut dst[plane * oh * ow + i * ow..plane * oh * ow + (i + 1) * ow];
                for (j, v) in drow.iter_mut().enumerate() {
                    *v = srow[j / f];
                }
            }
        }
        self.in_shape = x.shape().to_vec();
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (n, c, h, w) = (
            self.in_shape[0],
            self.in_shape[1],
            self.in_shape[2],
            self.in_shape[3],
        );
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut dx = Tensor::zeros(&self.in_shape);
        let g = grad_out.data();
        let d = dx.data_mut();
        for plane in 0..n * c {
            for i in 0..oh {
                for j in 0..ow {
                    d[plane * h * w + (i / f) * w + j / f] += g[plane * oh * ow + i * ow + j];
                }
            }
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        vec![
            input[0],
            input[1],
            input[2] * self.factor,
            input[3] * self.factor,
        ]
    }

    fn kind(&self) -> &'static str {
        "upsample2d"
    }
}

use rand::Rng;

use crate::gemm::{col2im, im2col, sgemm, ConvGeometry, Mat};
use crate::init::Init;
use crate::layer::{join, Layer, Param, Pass, Window};
use crate::tensor::Tensor;

/// Square-kernel 2-D convolution. Weight layout `[out, in, k, k]`.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Tensor>,
    col: Vec<f32>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        let weight =
            Param::new(init.tensor(&[out_ch, in_ch, kernel, kernel], fan_in, fan_out, rng));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            input: None,
            col: Vec::new(),
        }
    }

    fn geometry(&self, h: usize, w: usize) -> ConvGeometry {
        ConvGeometry::new(self.in_ch, h, w, self.kernel, self.stride, self.padding)
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(
            c, self.in_ch,
            "conv expected {} input channels, got {c}",
            self.in_ch
        );
        let g = self.geometry(h, w);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        self.col.resize(rows * cols, 0.0);
        let mut out = Tensor::zeros(&[n, self.out_ch, g.out_h, g.out_w]);
        let in_per = c * h * w;
        let out_per = self.out_ch * cols;
        let wmat = Mat::new(self.weight.value.data(), self.out_ch, rows);
        for i in 0..n {
            im2col(&x.data()[i * in_per..(i + 1) * in_per], &g, &mut self.col);
            let dst = &mut out.data_mut()[i * out_per..(i + 1) * out_per];
            sgemm(1.0, wmat, Mat::new(&self.col, rows, cols), 0.0, dst);
            if let Some(b) = &self.bias {
                for (o, chunk) in dst.chunks_mut(cols).enumerate() {
                    let bv = b.value.data()[o];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.input = pass.record.then(|| x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .input
            .as_ref()
            .expect("conv backward without recorded forward");
        let (n, c, h, w) = x.dims4();
        let g = self.geometry(h, w);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let in_per = c * h * w;
        let out_per = self.out_ch * cols;
        let mut dx = Tensor::zeros(x.shape());
        let mut dcol = vec![0.0; rows * cols];
        self.col.resize(rows * cols, 0.0);
        let want_w = self.weight.wants_grad();
        for i in 0..n {
            let go = &grad_out.data()[i * out_per..(i + 1) * out_per];
            let go_mat = Mat::new(go, self.out_ch, cols);
            if want_w {
                im2col(&x.data()[i * in_per..(i + 1) * in_per], &g, &mut self.col);
                sgemm(
                    1.0,
                    go_mat,
                    Mat::new(&self.col, rows, cols).t(),
                    1.0,
                    &mut self.weight.grad,
                );
            }
            if let Some(b) = &mut self.bias {
                if b.wants_grad() {
                    for (o, chunk) in go.chunks(cols).enumerate() {
                        b.grad[o] += chunk.iter().sum::<f32>();
                    }
                }
            }
            sgemm(
                1.0,
                Mat::new(self.weight.value.data(), self.out_ch, rows).t(),
                go_mat,
                0.0,
                &mut dcol,
            );
            col2im(&dcol, &g, &mut dx.data_mut()[i * in_per..(i + 1) * in_per]);
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let g = self.geometry(input[2], input[3]);
        vec![input[0], self.out_ch, g.out_h, g.out_w]
    }

    fn window(&self) -> Option<Window> {
        Some(Window {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        })
    }

    fn kind(&self) -> &'static str {
        "conv2d"
    }
}

/// Transposed (fractionally strided) convolution. Weight layout `[in, out, k, k]`;
/// output size `(in - 1) * stride - 2 * padding + kernel`.
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Tensor>,
    col: Vec<f32>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = out_ch * kernel * kernel;
        let fan_out = in_ch * kernel * kernel;
        let weight =
            Param::new(init.tensor(&[in_ch, out_ch, kernel, kernel], fan_in, fan_out, rng));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            input: None,
            col: Vec::new(),
        }
    }

    fn out_size(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.kernel - 2 * self.padding
    }

    /// Geometry of the equivalent forward convolution from output back to input.
    fn geometry(&self, h: usize, w: usize) -> ConvGeometry {
        let g = ConvGeometry::new(
            self.out_ch,
            self.out_size(h),
            self.out_size(w),
            self.kernel,
            self.stride,
            self.padding,
        );
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        g
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(
            c, self.in_ch,
            "deconv expected {} input channels, got {c}",
            self.in_ch
        );
        let g = self.geometry(h, w);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        self.col.resize(rows * cols, 0.0);
        let (oh, ow) = (g.height, g.width);
        let mut out = Tensor::zeros(&[n, self.out_ch, oh, ow]);
        let in_per = c * h * w;
        let out_per = self.out_ch * oh * ow;
        for i in 0..n {
            sgemm(
                1.0,
                Mat::new(self.weight.value.data(), self.in_ch, rows).t(),
                Mat::new(&x.data()[i * in_per..(i + 1) * in_per], c, cols),
                0.0,
                &mut self.col,
            );
            let dst = &mut out.data_mut()[i * out_per..(i + 1) * out_per];
            col2im(&self.col, &g, dst);
            if let Some(b) = &self.bias {
                for (o, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                    let bv = b.value.data()[o];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.input = pass.record.then(|| x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .input
            .as_ref()
            .expect("deconv backward without recorded forward");
        let (n, c, h, w) = x.dims4();
        let g = self.geometry(h, w);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        self.col.resize(rows * cols, 0.0);
        let in_per = c * h * w;
        let out_per = self.out_ch * g.height * g.width;
        let mut dx = Tensor::zeros(x.shape());
        let want_w = self.weight.wants_grad();
        for i in 0..n {
            let go = &grad_out.data()[i * out_per..(i + 1) * out_per];
            im2col(go, &g, &mut self.col);
            let gcol = Mat::new(&self.col, rows, cols);
            sgemm(
                1.0,
                Mat::new(self.weight.value.data(), self.in_ch, rows),
                gcol,
                0.0,
                &mut dx.data_mut()[i * in_per..(i + 1) * in_per],
            );
            if want_w {
                sgemm(
                    1.0,
                    Mat::new(&x.data()[i * in_per..(i + 1) * in_per], c, cols),
                    gcol.t(),
                    1.0,
                    &mut self.weight.grad,
                );
            }
            if let Some(b) = &mut self.bias {
                if b.wants_grad() {
                    for (o, chunk) in go.chunks(g.height * g.width).enumerate() {
                        b.grad[o] += chunk.iter().sum::<f32>();
                    }
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        vec![
            input[0],
            self.out_ch,
            self.out_size(input[2]),
            self.out_size(input[3]),
        ]
    }

    fn kind(&self) -> &'static str {
        "conv_transpose2d"
    }
}

//! Thin safe wrappers over `matrixmultiply::sgemm` plus the im2col/col2im
//! transforms the convolution layers are built on.

/// Row-major matrix operand with an optional transpose flag.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// View of the transpose; the logical shape becomes `cols x rows`.
    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = alpha * a @ b + beta * c`, with `c` a row-major `m x n` buffer.
pub fn sgemm(alpha: f32, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    let (m, k) = a.logical();
    let (kb, n) = b.logical();
    assert_eq!(k, kb, "inner dimensions differ");
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: bounds are asserted above; strides describe row-major buffers
    // of the asserted sizes, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel convolution window sweep over a
/// `channels x height x width` image producing `out_h x out_w` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let out_h = conv_out(height, kernel, stride, padding);
        let out_w = conv_out(width, kernel, stride, padding);
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output length of a strided window sweep. Panics when the window does not fit.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    let padded = size + 2 * padding;
    assert!(
        padded >= kernel,
        "kernel {kernel} larger than padded input {padded}"
    );
    (padded - kernel) / stride + 1
}

/// Unfold `img` (`channels*height*width`) into a `col_rows x col_cols` matrix.
pub fn im2col(img: &[f32], g: &ConvGeometry, col: &mut [f32]) {
    if g.is_pointwise() {
        col[..img.len()].copy_from_slice(img);
        return;
    }
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let ih = (oh * s) as isize - p + ki as isize;
                    let out_row = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    if s == 1 {
                        let (lo, hi) = valid_range(g.out_w, g.width, kj as isize - p);
                        out_row[..lo].fill(0.0);
                        out_row[hi..].fill(0.0);
                        if lo < hi {
                            let start = (lo as isize + kj as isize - p) as usize;
                            out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                        continue;
                    }
                    for (ow, v) in out_row.iter_mut().enumerate() {
                        let iw = (ow * s) as isize - p + kj as isize;
                        *v = if iw >= 0 && iw < g.width as isize {
                            src[iw as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back onto `img`, accumulating overlapping windows.
/// `img` is overwritten.
pub fn col2im(col: &[f32], g: &ConvGeometry, img: &mut [f32]) {
    if g.is_pointwise() {
        img.copy_from_slice(&col[..img.len()]);
        return;
    }
    img.fill(0.0);
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let ih = (oh * s) as isize - p + ki as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    let src_row = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    if s == 1 {
                        let (lo, hi) = valid_range(g.out_w, g.width, kj as isize - p);
                        if lo < hi {
                            let start = (lo as isize + kj as isize - p) as usize;
                            for (d, v) in
                                dst[start..start + hi - lo].iter_mut().zip(&src_row[lo..hi])
                            {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for (ow, v) in src_row.iter().enumerate() {
                        let iw = (ow * s) as isize - p + kj as isize;
                        if iw >= 0 && iw < g.width as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose stride-1 input column `ow + offset` lies in `[0, width)`.
fn valid_range(out_w: usize, width: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).clamp(0, out_w as isize) as usize;
    let hi = (width as isize - offset).clamp(0, out_w as isize) as usize;
    (lo, hi.max(lo))
}

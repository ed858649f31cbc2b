//! Dense kernels backing the tape operations. All buffers are row-major.

/// Geometry of one 2-D convolution on a single batch element.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` on a per-thread buffer of `len` values with unspecified contents.
pub fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

/// Output columns `[lo, hi)` of one kernel offset whose source column
/// `oj·stride + k − pad` lies inside `[0, width)`.
fn valid_span(out: usize, stride: usize, k: usize, pad: usize, width: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
    let hi = if width + pad > k {
        ((width + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds one `[C, H, W]` image into `[C·kh·kw, H'·W']` patch columns.
pub fn im2col(input: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = oh * ow;
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_span(ow, g.stride, kj, g.padding, g.width);
                for oi in 0..oh {
                    let line = &mut dst[oi * ow..(oi + 1) * ow];
                    let ii = oi * g.stride + ki;
                    if ii < g.padding || ii - g.padding >= g.height {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[(ii - g.padding) * g.width..(ii - g.padding + 1) * g.width];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if g.stride == 1 {
                        let start = lo + kj - g.padding;
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (oj, out) in line[lo..hi].iter_mut().enumerate() {
                            *out = src[(lo + oj) * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub fn col2im_add(cols: &[f64], g: &ConvGeometry, grad_input: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = oh * ow;
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_span(ow, g.stride, kj, g.padding, g.width);
                for oi in 0..oh {
                    let ii = oi * g.stride + ki;
                    if ii < g.padding || ii - g.padding >= g.height {
                        continue;
                    }
                    let dst =
                        &mut plane[(ii - g.padding) * g.width..(ii - g.padding + 1) * g.width];
                    let line = &src[oi * ow + lo..oi * ow + hi];
                    if g.stride == 1 {
                        let start = lo + kj - g.padding;
                        for (d, s) in dst[start..start + hi - lo].iter_mut().zip(line) {
                            *d += s;
                        }
                    } else {
                        for (oj, s) in line.iter().enumerate() {
                            dst[(lo + oj) * g.stride + kj - g.padding] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Matrix operand description: row-major `rows × cols` buffer, optionally
/// read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `c = beta·c + a·b` with `c` row-major `m × n`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    let (m, k, rsa, csa) = a.logical();
    let (kb, n, rsb, csb) = b.logical();
    assert_eq!(k, kb, "gemm inner dimensions disagree");
    assert_eq!(c.len(), m * n, "gemm output has wrong length");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the asserts above bound every index the strided reads and
    // writes can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

//! 2-D convolution as im2col + GEMM, exposed to candle as a custom op with an
//! analytic backward pass.

use candle_core::{CpuStorage, CustomOp2, Layout, Shape, Tensor};

use super::real::{contiguous, dims4, dispatch_real, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    fn out_len(&self, len: usize, k: usize) -> usize {
        (len + 2 * self.padding - self.dilation * (k - 1) - 1) / self.stride + 1
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    p: ConvParams,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate (may be out of range) of tap `i` for output `o`.
    #[inline]
    fn src(&self, o: usize, i: usize) -> isize {
        (o * self.p.stride + i * self.p.dilation) as isize - self.p.padding as isize
    }
}

fn im2col<T: Real>(img: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * cols;
                for oy in 0..g.oh {
                    let sy = g.src(oy, i);
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if sy < 0 || sy >= g.h as isize {
                        dst.fill(T::default());
                        continue;
                    }
                    let src_row = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let sx = g.src(ox, j);
                        *d = if sx < 0 || sx >= g.w as isize {
                            T::default()
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &Geometry, img: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * cols;
                for oy in 0..g.oh {
                    let sy = g.src(oy, i);
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let src = &col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst_row = &mut plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let sx = g.src(ox, j);
                        if sx >= 0 && sx < g.w as isize {
                            dst_row[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp(ConvParams);

fn conv_fwd<T: Real>(
    p: ConvParams,
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let x = contiguous::<T>(s1, l1, "conv2d")?;
    let k = contiguous::<T>(s2, l2, "conv2d")?;
    let (b, c, h, w) = dims4(l1.shape(), "conv2d")?;
    let (o, kc, kh, kw) = dims4(l2.shape(), "conv2d")?;
    if kc != c {
        return Err(candle_core::Error::Msg(format!(
            "conv2d: input has {c} channels, kernel expects {kc}"
        )));
    }
    let g = Geometry {
        c,
        h,
        w,
        kh,
        kw,
        oh: p.out_len(h, kh),
        ow: p.out_len(w, kw),
        p,
    };
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::default(); rows * cols];
    let mut out = vec![T::default(); b * o * cols];
    for bi in 0..b {
        im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &g, &mut col);
        let dst = &mut out[bi * o * cols..(bi + 1) * o * cols];
        T::gemm(o, rows, cols, T::from_f64(1.0), k, rows as isize, 1, &col, cols as isize, 1, T::default(), dst, cols as isize, 1);
    }
    Ok((T::storage(out), Shape::from((b, o, g.oh, g.ow))))
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-gemm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_real!(s1, conv_fwd(self.0, s1, l1, s2, l2))
    }

    fn bwd(
        &self,
        input: &Tensor,
        kernel: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let (_, _, h, w) = input.dims4()?;
        let (_, _, kh, kw) = kernel.dims4()?;
        let gi = if input.track_op() {
            Some(grad.apply_op2_no_bwd(kernel, &ConvGradInput { p: self.0, h, w })?)
        } else {
            None
        };
        let gk = if kernel.track_op() {
            Some(input.apply_op2_no_bwd(&grad, &ConvGradKernel { p: self.0, kh, kw })?)
        } else {
            None
        };
        Ok((gi, gk))
    }
}

/// Gradient w.r.t. the input: `(grad, kernel) -> dL/dx`.
struct ConvGradInput {
    p: ConvParams,
    h: usize,
    w: usize,
}

fn grad_input<T: Real>(
    op: &ConvGradInput,
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let gr = contiguous::<T>(s1, l1, "conv2d-grad-input")?;
    let k = contiguous::<T>(s2, l2, "conv2d-grad-input")?;
    let (b, o, oh, ow) = dims4(l1.shape(), "conv2d-grad-input")?;
    let (_, c, kh, kw) = dims4(l2.shape(), "conv2d-grad-input")?;
    let g = Geometry {
        c,
        h: op.h,
        w: op.w,
        kh,
        kw,
        oh,
        ow,
        p: op.p,
    };
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::default(); rows * cols];
    let mut out = vec![T::default(); b * c * op.h * op.w];
    for bi in 0..b {
        let gb = &gr[bi * o * cols..(bi + 1) * o * cols];
        // col = K^T (rows x o) * grad (o x cols)
        T::gemm(rows, o, cols, T::from_f64(1.0), k, 1, rows as isize, gb, cols as isize, 1, T::default(), &mut col, cols as isize, 1);
        col2im(&col, &g, &mut out[bi * c * op.h * op.w..(bi + 1) * c * op.h * op.w]);
    }
    Ok((T::storage(out), Shape::from((b, c, op.h, op.w))))
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "conv2d-grad-input"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_real!(s1, grad_input(self, s1, l1, s2, l2))
    }
}

/// Gradient w.r.t. the kernel: `(input, grad) -> dL/dK`.
struct ConvGradKernel {
    p: ConvParams,
    kh: usize,
    kw: usize,
}

fn grad_kernel<T: Real>(
    op: &ConvGradKernel,
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let x = contiguous::<T>(s1, l1, "conv2d-grad-kernel")?;
    let gr = contiguous::<T>(s2, l2, "conv2d-grad-kernel")?;
    let (b, c, h, w) = dims4(l1.shape(), "conv2d-grad-kernel")?;
    let (_, o, oh, ow) = dims4(l2.shape(), "conv2d-grad-kernel")?;
    let g = Geometry {
        c,
        h,
        w,
        kh: op.kh,
        kw: op.kw,
        oh,
        ow,
        p: op.p,
    };
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![T::default(); rows * cols];
    let mut out = vec![T::default(); o * rows];
    for bi in 0..b {
        im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &g, &mut col);
        let gb = &gr[bi * o * cols..(bi + 1) * o * cols];
        // dK += grad (o x cols) * col^T (cols x rows)
        T::gemm(o, cols, rows, T::from_f64(1.0), gb, cols as isize, 1, &col, 1, cols as isize, T::from_f64(1.0), &mut out, rows as isize, 1);
    }
    Ok((T::storage(out), Shape::from((o, c, op.kh, op.kw))))
}

impl CustomOp2 for ConvGradKernel {
    fn name(&self) -> &'static str {
        "conv2d-grad-kernel"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_real!(s1, grad_kernel(self, s1, l1, s2, l2))
    }
}

/// `x: (B, C, H, W)`, `kernel: (O, C, kh, kw)` -> `(B, O, H', W')`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, p: ConvParams) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(&kernel.contiguous()?, Conv2dOp(p))
}

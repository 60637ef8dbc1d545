//! Bilinear backward warping `out(p) = img(p + phi(p))` as a custom op with
//! gradients for both the image and the field.

use candle_core::{CpuStorage, CustomOp2, CustomOp3, Layout, Shape, Tensor};

use crate::nn::real::{contiguous, dims4, dispatch_real, Real};

/// Corner indices and weights of a bilinear tap; `None` for corners off the
/// canvas.
#[derive(Clone, Copy)]
struct Tap {
    idx: [Option<usize>; 4],
    w: [f64; 4],
    /// Fractional offsets inside the cell.
    fx: f64,
    fy: f64,
}

#[inline]
fn tap(sx: f64, sy: f64, h: usize, w: usize) -> Tap {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |x: i64, y: i64| {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| y as usize * w + x as usize)
    };
    Tap {
        idx: [at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1)],
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        fx,
        fy,
    }
}

#[inline]
fn corners<T: Real>(plane: &[T], t: &Tap) -> [f64; 4] {
    let mut v = [0.0; 4];
    for k in 0..4 {
        if let Some(i) = t.idx[k] {
            v[k] = plane[i].to_f64();
        }
    }
    v
}

fn check(img: &Shape, field: &Shape, op: &'static str) -> candle_core::Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = dims4(img, op)?;
    let (fb, fc, fh, fw) = dims4(field, op)?;
    if fc != 2 || fh != h || fw != w || (fb != b && fb != 1) {
        return Err(candle_core::Error::Msg(format!(
            "{op}: field {:?} does not match image {:?}",
            field.dims(),
            img.dims()
        )));
    }
    Ok((b, c, h, w))
}

struct WarpOp;

fn warp_fwd<T: Real>(s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
    let img = contiguous::<T>(s1, l1, "warp")?;
    let field = contiguous::<T>(s2, l2, "warp")?;
    let (b, c, h, w) = check(l1.shape(), l2.shape(), "warp")?;
    let fb = l2.shape().dims()[0];
    let hw = h * w;
    let mut out = vec![T::default(); b * c * hw];
    for bi in 0..b {
        let f = &field[(bi % fb) * 2 * hw..][..2 * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = tap(x as f64 + f[p].to_f64(), y as f64 + f[hw + p].to_f64(), h, w);
                for ci in 0..c {
                    let plane = &img[(bi * c + ci) * hw..][..hw];
                    let v = corners(plane, &t);
                    let s = t.w[0] * v[0] + t.w[1] * v[1] + t.w[2] * v[2] + t.w[3] * v[3];
                    out[(bi * c + ci) * hw + p] = T::from_f64(s);
                }
            }
        }
    }
    Ok((T::storage(out), Shape::from((b, c, h, w))))
}

impl CustomOp2 for WarpOp {
    fn name(&self) -> &'static str {
        "warp-bilinear"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_real!(s1, warp_fwd(s1, l1, s2, l2))
    }

    fn bwd(
        &self,
        img: &Tensor,
        field: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (b, c, _, _) = img.dims4()?;
        let both = img.apply_op3_no_bwd(field, &grad.contiguous()?, &WarpGrad)?;
        let gi = img.track_op().then(|| both.narrow(1, 0, c)).transpose()?;
        let gf = if field.track_op() {
            let gf = both.narrow(1, c, 2)?;
            // A field shared across the batch collects every item's gradient.
            Some(if field.dim(0)? == 1 && b > 1 { gf.sum_keepdim(0)? } else { gf })
        } else {
            None
        };
        Ok((gi, gf))
    }
}

/// `(img, field, grad) -> [dL/dimg, dL/dfield]` stacked along channels.
struct WarpGrad;

fn warp_bwd<T: Real>(
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
    s3: &CpuStorage,
    l3: &Layout,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let img = contiguous::<T>(s1, l1, "warp-grad")?;
    let field = contiguous::<T>(s2, l2, "warp-grad")?;
    let grad = contiguous::<T>(s3, l3, "warp-grad")?;
    let (b, c, h, w) = check(l1.shape(), l2.shape(), "warp-grad")?;
    let fb = l2.shape().dims()[0];
    let hw = h * w;
    let oc = c + 2;
    let mut gi = vec![0f64; b * c * hw];
    let mut gf = vec![0f64; b * 2 * hw];
    for bi in 0..b {
        let f = &field[(bi % fb) * 2 * hw..][..2 * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = tap(x as f64 + f[p].to_f64(), y as f64 + f[hw + p].to_f64(), h, w);
                let (mut dx, mut dy) = (0.0, 0.0);
                for ci in 0..c {
                    let g = grad[(bi * c + ci) * hw + p].to_f64();
                    if g == 0.0 {
                        continue;
                    }
                    let plane = &img[(bi * c + ci) * hw..][..hw];
                    let v = corners(plane, &t);
                    dx += g * ((v[1] - v[0]) * (1.0 - t.fy) + (v[3] - v[2]) * t.fy);
                    dy += g * ((v[2] - v[0]) * (1.0 - t.fx) + (v[3] - v[1]) * t.fx);
                    let dst = &mut gi[(bi * c + ci) * hw..][..hw];
                    for k in 0..4 {
                        if let Some(i) = t.idx[k] {
                            dst[i] += g * t.w[k];
                        }
                    }
                }
                gf[bi * 2 * hw + p] = dx;
                gf[bi * 2 * hw + hw + p] = dy;
            }
        }
    }
    let mut out = Vec::with_capacity(b * oc * hw);
    for bi in 0..b {
        out.extend(gi[bi * c * hw..(bi + 1) * c * hw].iter().map(|&v| T::from_f64(v)));
        out.extend(gf[bi * 2 * hw..(bi + 1) * 2 * hw].iter().map(|&v| T::from_f64(v)));
    }
    Ok((T::storage(out), Shape::from((b, oc, h, w))))
}

impl CustomOp3 for WarpGrad {
    fn name(&self) -> &'static str {
        "warp-bilinear-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        dispatch_real!(s1, warp_bwd(s1, l1, s2, l2, s3, l3))
    }
}

/// Warps `img: (B, C, H, W)` by `field: (B, 2, H, W)` or `(1, 2, H, W)`.
pub(crate) fn warp_tensor(img: &Tensor, field: &Tensor) -> candle_core::Result<Tensor> {
    let field = field.to_dtype(img.dtype())?.contiguous()?;
    img.contiguous()?.apply_op2(&field, WarpOp)
}

//! Dense displacement fields: warping, gradients, local linear estimation
//! and per-stroke affine transforms.
//!
//! Fields are `(B, 2, H, W)` tensors in pixels, channel 0 = dx, channel 1 =
//! dy, with pixel centers at integer coordinates. Warping samples backwards:
//! `out(p) = img(p + phi(p))`.

mod affine;
mod warp;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::raster::{GrayImage, Mask};

pub use affine::{AffineStrokeTransform, SINGULAR_DET};

/// Displacement field tensor of shape `(B, 2, H, W)`.
#[derive(Clone, Debug)]
pub struct RegistrationField(Tensor);

impl RegistrationField {
    pub fn new(t: Tensor) -> Result<Self> {
        match t.dims() {
            &[_, 2, h, w] if h >= 2 && w >= 2 => Ok(Self(t)),
            other => Err(Error::shape(format!("field must be (B, 2, H, W) with H, W >= 2, got {other:?}"))),
        }
    }

    pub fn zeros(batch: usize, h: usize, w: usize, dtype: DType, device: &Device) -> Result<Self> {
        Self::new(Tensor::zeros((batch, 2, h, w), dtype, device)?)
    }

    /// Single field with `f(x, y) = [dx, dy]`.
    pub fn from_fn(h: usize, w: usize, dtype: DType, device: &Device, f: impl Fn(f64, f64) -> [f64; 2]) -> Result<Self> {
        let mut data = vec![0f64; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                let d = f(x as f64, y as f64);
                data[y * w + x] = d[0];
                data[h * w + y * w + x] = d[1];
            }
        }
        Self::new(Tensor::from_vec(data, (1, 2, h, w), device)?.to_dtype(dtype)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[3]
    }

    /// Field of batch item `i`, as a batch of one.
    pub fn item(&self, i: usize) -> Result<Self> {
        Self::new(self.0.narrow(0, i, 1)?)
    }

    pub fn check_finite(&self) -> Result<()> {
        let v = self.0.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("registration field has non-finite entries"))
        }
    }
}

/// Non-empty binary region selecting the pixels a linear estimate averages.
#[derive(Clone, Debug)]
pub struct RegionMask {
    mask: Mask,
    pixel_count: usize,
}

impl RegionMask {
    pub fn new(mask: Mask) -> Result<Self> {
        let pixel_count = mask.count();
        if pixel_count == 0 {
            return Err(Error::invalid("linear estimation needs a non-empty region"));
        }
        Ok(Self { mask, pixel_count })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn centroid(&self) -> [f64; 2] {
        let (x, y) = self.mask.centroid().expect("region is non-empty");
        [x, y]
    }
}

/// Bilinear backward warp of `image: (B, C, H, W)`, differentiable in both
/// arguments. A single field is shared across the batch.
pub fn warp(image: &Tensor, field: &RegistrationField) -> Result<Tensor> {
    let (b, _, h, w) = image.dims4()?;
    if (field.height(), field.width()) != (h, w) || (field.batch() != b && field.batch() != 1) {
        return Err(Error::shape(format!(
            "warp: image {:?} vs field {:?}",
            image.dims(),
            field.tensor().dims()
        )));
    }
    Ok(warp::warp_tensor(image, field.tensor())?)
}

fn diff_along(t: &Tensor, dim: usize) -> Result<Tensor> {
    let n = t.dim(dim)?;
    let first = (t.narrow(dim, 1, 1)? - t.narrow(dim, 0, 1)?)?;
    let last = (t.narrow(dim, n - 1, 1)? - t.narrow(dim, n - 2, 1)?)?;
    if n == 2 {
        return Ok(Tensor::cat(&[&first, &last], dim)?);
    }
    let mid = ((t.narrow(dim, 2, n - 2)? - t.narrow(dim, 0, n - 2)?)? * 0.5)?;
    Ok(Tensor::cat(&[&first, &mid, &last], dim)?)
}

/// `(d/dX, d/dY)` of a `(B, C, H, W)` tensor: central differences inside,
/// one-sided at the borders.
pub fn spatial_gradient(t: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = t.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("gradient needs at least 2x2, got {h}x{w}")));
    }
    Ok((diff_along(t, 3)?, diff_along(t, 2)?))
}

/// `phi_d + weight * phi_e`.
pub fn compose_fields(phi_d: &RegistrationField, phi_e: &RegistrationField, weight: f64) -> Result<RegistrationField> {
    if phi_d.tensor().dims() != phi_e.tensor().dims() {
        return Err(Error::shape(format!(
            "compose: {:?} vs {:?}",
            phi_d.tensor().dims(),
            phi_e.tensor().dims()
        )));
    }
    RegistrationField::new((phi_d.tensor() + (phi_e.tensor() * weight)?)?)
}

/// Mean over pixels of `|d phi/dX|^2 + |d phi/dY|^2`.
pub fn smoothness(field: &RegistrationField) -> Result<Tensor> {
    let (gx, gy) = spatial_gradient(field.tensor())?;
    let per_pixel = (gx.sqr()?.sum_keepdim(1)? + gy.sqr()?.sum_keepdim(1)?)?;
    Ok(per_pixel.mean_all()?)
}

/// Batched local linear estimation of one field over several regions.
///
/// For each region the estimate is the masked mean of the field `c`, the
/// masked mean of its spatial gradient `G` and the region centroid `P`; the
/// induced displacement is `c + G (p - P)`.
#[derive(Clone, Debug)]
pub struct LinearEstimator {
    weights: Tensor,
    anchors: Vec<[f64; 2]>,
    anchor_x: Tensor,
    anchor_y: Tensor,
    basis: Tensor,
    h: usize,
    w: usize,
}

impl LinearEstimator {
    pub fn new(regions: &[RegionMask], dtype: DType, device: &Device) -> Result<Self> {
        let first = regions.first().ok_or_else(|| Error::invalid("no regions to estimate"))?;
        let (w, h) = (first.mask.width(), first.mask.height());
        let hw = h * w;
        let mut weights = vec![0f64; regions.len() * hw];
        let mut anchors = Vec::with_capacity(regions.len());
        for (i, r) in regions.iter().enumerate() {
            if (r.mask.width(), r.mask.height()) != (w, h) {
                return Err(Error::shape("regions differ in size"));
            }
            let inv = 1.0 / r.pixel_count as f64;
            for (dst, &m) in weights[i * hw..(i + 1) * hw].iter_mut().zip(r.mask.data()) {
                if m {
                    *dst = inv;
                }
            }
            anchors.push(r.centroid());
        }
        let mut basis = vec![1f64; 3 * hw];
        for y in 0..h {
            for x in 0..w {
                basis[hw + y * w + x] = x as f64;
                basis[2 * hw + y * w + x] = y as f64;
            }
        }
        let n = regions.len();
        let col = |k: usize| -> Result<Tensor> {
            let v: Vec<f64> = anchors.iter().map(|a| a[k]).collect();
            Ok(Tensor::from_vec(v, (n, 1), device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            weights: Tensor::from_vec(weights, (n, hw), device)?.to_dtype(dtype)?,
            anchor_x: col(0)?,
            anchor_y: col(1)?,
            anchors,
            basis: Tensor::from_vec(basis, (3, hw), device)?.to_dtype(dtype)?,
            h,
            w,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// `(n, 6)` coefficients `[cx, cy, dcx/dX, dcy/dX, dcx/dY, dcy/dY]` for a
    /// single field (batch of one).
    pub fn coefficients(&self, field: &RegistrationField) -> Result<Tensor> {
        if field.batch() != 1 || (field.height(), field.width()) != (self.h, self.w) {
            return Err(Error::shape(format!(
                "estimator built for 1x2x{}x{}, got {:?}",
                self.h,
                self.w,
                field.tensor().dims()
            )));
        }
        let t = field.tensor();
        let (gx, gy) = spatial_gradient(t)?;
        let feats = Tensor::cat(&[t, &gx, &gy], 1)?.reshape((6, self.h * self.w))?;
        let feats = feats.to_dtype(self.weights.dtype())?.t()?.contiguous()?;
        Ok(self.weights.matmul(&feats)?)
    }

    /// Linear displacement fields `(n, 2, H, W)` for coefficients from
    /// [`coefficients`](Self::coefficients).
    pub fn linear_fields(&self, coeffs: &Tensor) -> Result<Tensor> {
        let n = self.len();
        let c = |k: usize| coeffs.narrow(1, k, 1);
        let (cx, cy, gxx, gyx, gxy, gyy) = (c(0)?, c(1)?, c(2)?, c(3)?, c(4)?, c(5)?);
        let (px, py) = (&self.anchor_x, &self.anchor_y);
        let ax = ((&cx - (&gxx * px)?)? - (&gxy * py)?)?;
        let ay = ((&cy - (&gyx * px)?)? - (&gyy * py)?)?;
        let rows = Tensor::cat(&[&ax, &gxx, &gxy, &ay, &gyx, &gyy], 1)?.reshape((2 * n, 3))?;
        Ok(rows.matmul(&self.basis)?.reshape((n, 2, self.h, self.w))?)
    }

    pub fn transforms(&self, coeffs: &Tensor) -> Result<Vec<AffineStrokeTransform>> {
        let rows = coeffs.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(rows
            .iter()
            .zip(&self.anchors)
            .map(|(r, &anchor)| AffineStrokeTransform {
                g: [[r[2], r[4]], [r[3], r[5]]],
                c: [r[0], r[1]],
                anchor,
                fallback: false,
            })
            .collect())
    }
}

/// Linear estimate of `field` (batch of one) over a single region.
pub fn linear_estimate(field: &RegistrationField, mask: &RegionMask) -> Result<AffineStrokeTransform> {
    let est = LinearEstimator::new(std::slice::from_ref(mask), field.tensor().dtype(), field.tensor().device())?;
    let coeffs = est.coefficients(field)?;
    Ok(est.transforms(&coeffs)?.remove(0))
}

/// Displacement field `T(p) - p` on an `h x w` grid.
pub fn affine_field(t: &AffineStrokeTransform, h: usize, w: usize, dtype: DType, device: &Device) -> Result<RegistrationField> {
    RegistrationField::from_fn(h, w, dtype, device, |x, y| t.displacement([x, y]))
}

/// Moves image content forward under `t` by sampling at `t^-1(q)`. The flag
/// reports a singular-inverse fallback.
pub fn render_affine(image: &Tensor, t: &AffineStrokeTransform) -> Result<(Tensor, bool)> {
    let (_, _, h, w) = image.dims4()?;
    let inv = t.invert();
    let field = affine_field(&inv, h, w, image.dtype(), image.device())?;
    Ok((warp(image, &field)?, inv.fallback))
}

/// [`render_affine`] on a plain image.
pub fn render_affine_image(image: &GrayImage, t: &AffineStrokeTransform) -> (GrayImage, bool) {
    let inv = t.invert();
    let (w, h) = (image.width(), image.height());
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let s = inv.apply([x as f64, y as f64]);
            out.set(x, y, image.sample(s[0], s[1]));
        }
    }
    (out, inv.fallback)
}

/// Dense inverse by fixed-point iteration `psi(q) = -phi(q + psi(q))`, so that
/// warping by `psi` undoes warping by `phi` where the map is well behaved.
pub fn invert_field(field: &RegistrationField, iterations: usize) -> Result<RegistrationField> {
    let phi = field.tensor().detach();
    let mut psi = RegistrationField::new(phi.neg()?)?;
    for _ in 0..iterations {
        psi = RegistrationField::new(warp(&phi, &psi)?.neg()?)?;
    }
    Ok(psi)
}

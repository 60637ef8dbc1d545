use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;

use super::conv::{conv2d, ConvParams};
use super::params::{Init, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    params: ConvParams,
}

impl Conv2d {
    /// `k x k` convolution with "same"-style padding `dilation * (k / 2)`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        Self::with_init(store, name, cin, cout, k, stride, dilation, Init::Kaiming { fan_in: cin * k * k })
    }

    /// Conv whose weights and bias start at zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::with_init(store, name, cin, cout, k, 1, 1, Init::Zeros)
    }

    #[allow(clippy::too_many_arguments)]
    fn with_init(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        init: Init,
    ) -> Result<Self> {
        let weight = store.param(&format!("{name}.weight"), &[cout, cin, k, k], init)?;
        let bias = store.param(&format!("{name}.bias"), &[cout], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            params: ConvParams::new(stride, dilation * (k / 2), dilation),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.params)?;
        let b = self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::with_init(store, name, cin, cout, Init::Kaiming { fan_in: cin }, Init::Zeros)
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), &[cout, cin], weight)?,
            bias: store.param(&format!("{name}.bias"), &[cout], bias)?,
        })
    }

    /// `(N, in) -> (N, out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * 0.2)?)?)
}

/// Mean over the spatial dims: `(B, C, H, W) -> (B, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Half-pixel-centered linear interpolation matrix `(out, in)`.
fn interp_matrix(out: usize, input: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; out * input];
    let scale = input as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(input - 1);
        let w = src - i0 as f64;
        m[o * input + i0] += 1.0 - w;
        m[o * input + i1] += w;
    }
    Ok(Tensor::from_vec(m, (out, input), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of `(B, C, H, W)` to `(B, C, oh, ow)` as two matrix
/// products, so it is differentiable.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let aw = interp_matrix(ow, w, x.dtype(), x.device())?;
    let ah = interp_matrix(oh, h, x.dtype(), x.device())?;
    let rows = x.reshape((b * c * h, w))?.matmul(&aw.t()?)?;
    let cols = rows.reshape((b * c, h, ow))?.transpose(1, 2)?.contiguous()?.reshape((b * c * ow, h))?;
    let out = cols.matmul(&ah.t()?)?.reshape((b * c, ow, oh))?.transpose(1, 2)?;
    Ok(out.contiguous()?.reshape((b, c, oh, ow))?)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(h * factor, w * factor)?)
}

/// Mean binary cross-entropy of `logits` against `targets` in `[0, 1]`,
/// in the overflow-safe form `max(x, 0) - x y + log(1 + exp(-|x|))`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let pos = logits.relu()?;
    let xy = (logits * targets)?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((pos - xy)? + soft)?.mean_all()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

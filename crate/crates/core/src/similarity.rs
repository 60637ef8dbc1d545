//! ContentNet: a small stroke autoencoder whose normalized codes define the
//! similarity `S_c(a, b) = |n(E(a)) - n(E(b))|`.

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, leaky_relu, sigmoid, upsample, Adam, Checkpoint, Conv2d, ParamStore};
use crate::raster::{Mask, CANVAS};

pub const CHECKPOINT_KIND: &str = "contentnet";

/// Keeps the distance differentiable when two codes coincide.
const DIST_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentConfig {
    pub input_size: usize,
    /// Channels of the code map at 1/16 resolution; the flattened map is the
    /// embedding.
    pub code_channels: usize,
    /// Widths of the four stride-2 encoder stages.
    pub widths: [usize; 4],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            input_size: CANVAS,
            code_channels: 8,
            widths: [4, 8, 16, 32],
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            lr_halve_every: 5,
            holdout: 0.1,
            seed: 0,
        }
    }
}

/// Unit-norm rows, `e / sqrt(|e|^2 + eps)`.
pub fn normalize(e: &Tensor) -> Result<Tensor> {
    let norm = (e.sqr()?.sum_keepdim(1)? + DIST_EPS)?.sqrt()?;
    Ok(e.broadcast_div(&norm)?)
}

/// Row-wise distance between two batches of normalized codes.
pub fn code_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d2 = (a - b)?.sqr()?.sum(1)?;
    Ok(((d2 + DIST_EPS)?.sqrt()? - DIST_EPS.sqrt())?)
}

pub struct ContentNet {
    config: ContentConfig,
    store: ParamStore,
    enc: [Conv2d; 4],
    embed: Conv2d,
    dec_in: Conv2d,
    dec: [Conv2d; 4],
    dec_out: Conv2d,
}

impl ContentNet {
    pub fn new(config: ContentConfig, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(config.seed, dtype);
        Self::build(config, store)
    }

    fn build(config: ContentConfig, mut store: ParamStore) -> Result<Self> {
        if config.input_size % 16 != 0 || config.input_size < 32 {
            return Err(Error::invalid(format!(
                "content input size {} must be a multiple of 16, at least 32",
                config.input_size
            )));
        }
        let w = config.widths;
        let s = &mut store;
        let enc = [
            Conv2d::new(s, "enc0", 1, w[0], 3, 2, 1)?,
            Conv2d::new(s, "enc1", w[0], w[1], 3, 2, 1)?,
            Conv2d::new(s, "enc2", w[1], w[2], 3, 2, 1)?,
            Conv2d::new(s, "enc3", w[2], w[3], 3, 2, 1)?,
        ];
        let embed = Conv2d::new(s, "embed", w[3], config.code_channels, 1, 1, 1)?;
        let dec_in = Conv2d::new(s, "dec_in", config.code_channels, w[3], 3, 1, 1)?;
        let dec = [
            Conv2d::new(s, "dec0", w[3], w[2], 3, 1, 1)?,
            Conv2d::new(s, "dec1", w[2], w[1], 3, 1, 1)?,
            Conv2d::new(s, "dec2", w[1], w[0], 3, 1, 1)?,
            Conv2d::new(s, "dec3", w[0], w[0], 3, 1, 1)?,
        ];
        let dec_out = Conv2d::new(s, "dec_out", w[0], 1, 3, 1, 1)?;
        Ok(Self {
            config,
            store,
            enc,
            embed,
            dec_in,
            dec,
            dec_out,
        })
    }

    pub fn load(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        let (config, mut store, _) = ckpt.load::<ContentConfig>(CHECKPOINT_KIND, dtype)?;
        store.freeze();
        Self::build(config, store)
    }

    pub fn save(&self, ckpt: &Checkpoint, metrics: serde_json::Value) -> Result<()> {
        ckpt.save(CHECKPOINT_KIND, &self.config, metrics, &self.store)
    }

    pub fn config(&self) -> &ContentConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Raw codes `(B, K * (S/16)^2)` of images `(B, 1, S, S)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.config.input_size;
        if c != 1 || h != s || w != s {
            return Err(Error::shape(format!("content encoder expects (B, 1, {s}, {s}), got {:?}", x.dims())));
        }
        let mut h = x.to_dtype(self.dtype())?;
        for conv in &self.enc {
            h = leaky_relu(&conv.forward(&h)?)?;
        }
        Ok(self.embed.forward(&h)?.flatten_from(1)?)
    }

    /// Reconstruction logits `(B, 1, S, S)`.
    pub fn decode(&self, code: &Tensor) -> Result<Tensor> {
        let side = self.config.input_size / 16;
        let b = code.dim(0)?;
        let code = code.reshape((b, self.config.code_channels, side, side))?;
        let mut h = leaky_relu(&self.dec_in.forward(&code)?)?;
        for conv in &self.dec {
            h = leaky_relu(&conv.forward(&upsample(&h, 2)?)?)?;
        }
        self.dec_out.forward(&h)
    }

    /// `S_c` for each pair of rows of `a` and `b`, both `(B, 1, S, S)`.
    pub fn s_c(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(Error::shape(format!("s_c: {:?} vs {:?}", a.dims(), b.dims())));
        }
        let both = self.encode(&Tensor::cat(&[a, b], 0)?)?;
        let n = a.dim(0)?;
        let codes = normalize(&both)?;
        code_distance(&codes.narrow(0, 0, n)?, &codes.narrow(0, n, n)?)
    }

    fn reconstruction_loss(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.decode(&self.encode(x)?)?;
        bce_with_logits(&logits, x)
    }

    /// Reconstruction probabilities.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        sigmoid(&self.decode(&self.encode(x)?)?)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ContentHistory {
    /// Held-out reconstruction BCE before training, then after each epoch.
    pub holdout_bce: Vec<f64>,
    pub train_bce: Vec<f64>,
}

fn batch_tensor(masks: &[&Mask], dtype: DType, device: &Device) -> Result<Tensor> {
    let ts = masks.iter().map(|m| m.to_tensor(device)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 0)?.to_dtype(dtype)?)
}

fn mean_loss(net: &ContentNet, masks: &[&Mask], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in masks.chunks(batch) {
        let x = batch_tensor(chunk, net.dtype(), net.device())?;
        total += net.reconstruction_loss(&x)?.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
    }
    Ok(total / masks.len().max(1) as f64)
}

/// Trains an autoencoder on single-stroke masks.
pub fn train_contentnet(strokes: &[Mask], config: ContentConfig, dtype: DType) -> Result<(ContentNet, ContentHistory)> {
    if strokes.is_empty() {
        return Err(Error::invalid("ContentNet needs a non-empty stroke corpus"));
    }
    let s = config.input_size;
    if let Some(m) = strokes.iter().find(|m| m.width() != s || m.height() != s) {
        return Err(Error::shape(format!("stroke mask {}x{} vs input size {s}", m.width(), m.height())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<&Mask> = strokes.iter().collect();
    order.shuffle(&mut rng);
    let n_hold = ((strokes.len() as f64 * config.holdout).round() as usize).clamp(usize::from(strokes.len() > 1), strokes.len() - 1);
    let (holdout, train) = order.split_at(n_hold);
    let holdout = if holdout.is_empty() { train } else { holdout };
    let mut train: Vec<&Mask> = train.to_vec();

    let net = ContentNet::new(config.clone(), dtype)?;
    let mut opt = Adam::new(net.store.vars(), config.lr, config.lr_halve_every)?;
    let batch = config.batch_size.max(1);
    let mut history = ContentHistory {
        holdout_bce: vec![mean_loss(&net, holdout, batch)?],
        train_bce: Vec::new(),
    };
    for epoch in 0..config.epochs {
        opt.start_epoch(epoch);
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train.chunks(batch) {
            let x = batch_tensor(chunk, dtype, net.device())?;
            let loss = net.reconstruction_loss(&x)?;
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
            opt.step(&loss)?;
        }
        history.train_bce.push(total / train.len() as f64);
        history.holdout_bce.push(mean_loss(&net, holdout, batch)?);
        log::info!(
            "contentnet epoch {epoch}: train {:.4} holdout {:.4}",
            history.train_bce[epoch],
            history.holdout_bce[epoch + 1]
        );
    }
    let mut net = net;
    net.store.freeze();
    let net = ContentNet::build(net.config, net.store)?;
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dim: usize) -> ContentNet {
        ContentNet::new(
            ContentConfig {
                input_size: dim,
                ..ContentConfig::default()
            },
            DType::F64,
        )
        .unwrap()
    }

    #[test]
    fn codes_are_unit_norm() {
        let net = small(32);
        let x = Tensor::rand(0f64, 1.0, (3, 1, 32, 32), &Device::Cpu).unwrap();
        let n = normalize(&net.encode(&x).unwrap()).unwrap();
        for row in n.to_vec2::<f64>().unwrap() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encoder_rejects_wrong_resolution() {
        let net = small(32);
        let x = Tensor::zeros((1, 1, 64, 64), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(net.encode(&x), Err(Error::Shape(_))));
        assert!(net.s_c(&x, &x.narrow(2, 0, 32).unwrap()).is_err());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(train_contentnet(&[], ContentConfig::default(), DType::F32).is_err());
    }
}

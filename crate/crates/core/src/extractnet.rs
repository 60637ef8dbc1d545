//! Per-stroke extraction from an adaptively cropped input stack, with a
//! spatial-transformer block refining the reference-derived channels.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::StrokeSample;
use crate::error::{Error, Result};
use crate::field::{warp, RegistrationField};
use crate::nn::{bce_with_logits, global_avg_pool, leaky_relu, sigmoid, upsample, Adam, Checkpoint, Conv2d, Init, Linear, ParamStore};
use crate::prior::{PriorData, Reference};
use crate::raster::{GrayImage, Mask, CANVAS};
use crate::sdnet::SdnetModel;
use crate::segnet::{SegmentationResult, SegnetModel};

pub const CHECKPOINT_KIND: &str = "extractnet";
/// Default side of the crop space.
pub const CROP: usize = 128;
pub const CROP_MARGIN: f64 = 1.4;
pub const MIN_CROP: usize = 48;
/// Channels of the stack before the segmentation features.
pub const BASE_CHANNELS: usize = 4;
/// Value of the current stroke and of its same-category peers in the
/// relative-position channel.
pub const CURRENT_VALUE: f32 = 1.0;
pub const PEER_VALUE: f32 = 0.5;

/// Indices of the reference-derived channels the STN block moves.
const REFERENCE_CHANNELS: [usize; 2] = [1, 3];
const ENC_BASE: [usize; 2] = [64, 128];

/// Square source box in canvas pixels, mapped onto a `size x size` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub size: usize,
}

impl CropRecord {
    pub fn full(size: usize) -> Self {
        Self { x: 0, y: 0, side: CANVAS, size }
    }

    pub fn scale(&self) -> f64 {
        self.size as f64 / self.side as f64
    }
}

/// Square box around the mask's bounding box, `1.4x` its longer side clamped
/// to `[48, 256]`, shifted inside the canvas. Empty masks get the full canvas.
pub fn adaptive_crop(mask: &Mask, size: usize) -> CropRecord {
    let Some(b) = mask.bounding_box() else {
        return CropRecord::full(size);
    };
    let longer = b.width().max(b.height()) as f64;
    let side = ((CROP_MARGIN * longer).round() as usize).clamp(MIN_CROP, CANVAS);
    let place = |lo: usize, len: usize| -> usize {
        let center = lo as f64 + len as f64 / 2.0;
        let start = (center - side as f64 / 2.0).round();
        start.clamp(0.0, (CANVAS - side) as f64) as usize
    };
    CropRecord {
        x: place(b.x0, b.width()),
        y: place(b.y0, b.height()),
        side,
        size,
    }
}

/// Linear interpolation weights `(out, src_len)` for a separable resample.
fn interp_rows(out: usize, src_len: usize, src_of: impl Fn(f64) -> Option<f64>) -> Vec<f64> {
    let mut m = vec![0f64; out * src_len];
    for o in 0..out {
        let Some(src) = src_of(o as f64) else { continue };
        let src = src.clamp(0.0, (src_len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        let w = src - i0 as f64;
        m[o * src_len + i0] += 1.0 - w;
        m[o * src_len + i1] += w;
    }
    m
}

/// Crop-space pixel `u` samples canvas coordinate
/// `start + (u + 0.5) side / size - 0.5`, read on a map of `src_len` pixels
/// spanning the canvas.
fn crop_matrix(start: usize, side: usize, size: usize, src_len: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let k = CANVAS as f64 / src_len as f64;
    let m = interp_rows(size, src_len, |u| {
        let canvas = start as f64 + (u + 0.5) * side as f64 / size as f64 - 0.5;
        Some((canvas + 0.5) / k - 0.5)
    });
    Ok(Tensor::from_vec(m, (size, src_len), dev)?.to_dtype(dtype)?)
}

fn uncrop_matrix(start: usize, side: usize, size: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let m = interp_rows(CANVAS, size, |p| {
        (p >= start as f64 && p < (start + side) as f64).then(|| (p - start as f64 + 0.5) * size as f64 / side as f64 - 0.5)
    });
    Ok(Tensor::from_vec(m, (CANVAS, size), dev)?.to_dtype(dtype)?)
}

/// `my x (H, W) x mx^T` for every `(H, W)` slice of `x: (B, C, H, W)`.
fn separable(x: &Tensor, my: &Tensor, mx: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (my.dim(0)?, mx.dim(0)?);
    let rows = x.reshape((b * c * h, w))?.matmul(&mx.t()?)?;
    let cols = rows.reshape((b * c, h, ow))?.transpose(1, 2)?.contiguous()?.reshape((b * c * ow, h))?;
    let out = cols.matmul(&my.t()?)?.reshape((b * c, ow, oh))?.transpose(1, 2)?;
    Ok(out.contiguous()?.reshape((b, c, oh, ow))?)
}

/// Resamples canvas-aligned maps of any square resolution into crop space.
pub fn crop_tensor(x: &Tensor, rec: &CropRecord) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let my = crop_matrix(rec.y, rec.side, rec.size, h, x.dtype(), x.device())?;
    let mx = crop_matrix(rec.x, rec.side, rec.size, w, x.dtype(), x.device())?;
    separable(x, &my, &mx)
}

/// Places a crop-space map back on the canvas; zero outside the box.
pub fn uncrop_tensor(x: &Tensor, rec: &CropRecord) -> Result<Tensor> {
    let my = uncrop_matrix(rec.y, rec.side, rec.size, x.dtype(), x.device())?;
    let mx = uncrop_matrix(rec.x, rec.side, rec.size, x.dtype(), x.device())?;
    separable(x, &my, &mx)
}

pub fn crop_mask(mask: &Mask, rec: &CropRecord) -> Result<GrayImage> {
    GrayImage::from_tensor(&crop_tensor(&mask.to_tensor(&Device::Cpu)?, rec)?)
}

pub fn uncrop_image(img: &GrayImage, rec: &CropRecord) -> Result<GrayImage> {
    GrayImage::from_tensor(&uncrop_tensor(&img.to_tensor(&Device::Cpu)?, rec)?)
}

/// Which input groups are zeroed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Zeroes the transformed-reference channels.
    #[serde(default)]
    pub no_prior: bool,
    /// Zeroes the segmentation probability and feature channels.
    #[serde(default)]
    pub no_semantic: bool,
}

/// `(1, 4 + C, crop, crop)` stack: target, transformed reference stroke,
/// category probability, same-category reference strokes, segmentation
/// features.
pub struct ExtractInputStack {
    pub tensor: Tensor,
}

impl ExtractInputStack {
    pub fn channel(&self, c: usize) -> Result<GrayImage> {
        GrayImage::from_tensor(&self.tensor.narrow(1, c, 1)?)
    }
}

/// Stroke `i` highlighted at 1.0 among its same-category peers at 0.5.
pub fn ref_segment_image(prior: &PriorData, i: usize) -> GrayImage {
    let mut img = GrayImage::canvas();
    let cat = prior.strokes[i].category;
    for (j, s) in prior.strokes.iter().enumerate() {
        if s.category != cat {
            continue;
        }
        let v = if j == i { CURRENT_VALUE } else { PEER_VALUE };
        for (px, &on) in img.data_mut().iter_mut().zip(s.mask.data()) {
            if on {
                *px = px.max(v);
            }
        }
    }
    img
}

pub fn build_inputs(
    target: &GrayImage,
    i: usize,
    prior: &PriorData,
    seg: &SegmentationResult,
    ablation: Ablation,
    crop: usize,
) -> Result<(ExtractInputStack, CropRecord)> {
    if i >= prior.len() {
        return Err(Error::invalid(format!("stroke index {i} out of range for {} strokes", prior.len())));
    }
    let dev = Device::Cpu;
    let stroke = &prior.strokes[i];
    let rec = adaptive_crop(&stroke.mask, crop);
    let full = Tensor::cat(
        &[
            target.to_tensor(&dev)?,
            stroke.mask.to_tensor(&dev)?,
            seg.probs.narrow(0, stroke.category as usize, 1)?.unsqueeze(0)?.to_dtype(DType::F32)?,
            ref_segment_image(prior, i).to_tensor(&dev)?,
        ],
        1,
    )?;
    let base = crop_tensor(&full, &rec)?;
    let feat = crop_tensor(&seg.feature64.unsqueeze(0)?.to_dtype(DType::F32)?, &rec)?;
    let mut chans: Vec<Tensor> = (0..BASE_CHANNELS).map(|c| base.narrow(1, c, 1)).collect::<candle_core::Result<_>>()?;
    let mut feat = feat;
    if ablation.no_prior {
        for c in REFERENCE_CHANNELS {
            chans[c] = chans[c].zeros_like()?;
        }
    }
    if ablation.no_semantic {
        chans[2] = chans[2].zeros_like()?;
        feat = feat.zeros_like()?;
    }
    chans.push(feat);
    Ok((ExtractInputStack { tensor: Tensor::cat(&chans, 1)? }, rec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub channel_scale: f64,
    /// Channels of the segmentation features in the stack.
    pub feature_channels: usize,
    #[serde(default)]
    pub ablation: Ablation,
    pub val_fraction: f64,
    pub seed: u64,
    /// Side of the crop space.
    #[serde(default = "default_crop")]
    pub crop: usize,
    /// Examples drawn per epoch after shuffling; all when unset.
    #[serde(default)]
    pub epoch_examples: Option<usize>,
}

fn default_crop() -> usize {
    CROP
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 1e-4,
            lr_halve_every: 5,
            channel_scale: 1.0,
            feature_channels: 128,
            ablation: Ablation::default(),
            val_fraction: 0.1,
            seed: 0,
            crop: CROP,
            epoch_examples: None,
        }
    }
}

struct Net {
    loc: [Conv2d; 3],
    loc_fc: Linear,
    enc: [Conv2d; 2],
    mid: [Conv2d; 3],
    dec: [Conv2d; 2],
    head: Conv2d,
    basis: Tensor,
}

/// Affine displacement basis `[1, X, Y]` over the crop, `X, Y` in `[-1, 1]`.
fn affine_basis(size: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let half = size as f64 / 2.0;
    let mut v = Vec::with_capacity(3 * size * size);
    v.extend(std::iter::repeat_n(1.0, size * size));
    for k in 0..2 {
        for y in 0..size {
            for x in 0..size {
                let c = if k == 0 { x } else { y };
                v.push((c as f64 + 0.5 - half) / half);
            }
        }
    }
    Ok(Tensor::from_vec(v, (3, size * size), dev)?.to_dtype(dtype)?)
}

impl Net {
    fn new(cfg: &ExtractConfig, s: &mut ParamStore) -> Result<Self> {
        let w = ENC_BASE.map(|b| ((b as f64 * cfg.channel_scale).round() as usize).max(4));
        let cin = BASE_CHANNELS + cfg.feature_channels;
        Ok(Self {
            loc: [
                Conv2d::new(s, "loc0", cin, w[0], 3, 2, 1)?,
                Conv2d::new(s, "loc1", w[0], w[1], 3, 2, 1)?,
                Conv2d::new(s, "loc2", w[1], w[1], 3, 2, 1)?,
            ],
            loc_fc: Linear::with_init(s, "loc_fc", w[1], 6, Init::Zeros, Init::Zeros)?,
            enc: [
                Conv2d::new(s, "enc0", cin, w[0], 3, 2, 1)?,
                Conv2d::new(s, "enc1", w[0], w[1], 3, 2, 1)?,
            ],
            mid: [
                Conv2d::new(s, "mid2", w[1], w[1], 3, 1, 2)?,
                Conv2d::new(s, "mid4", w[1], w[1], 3, 1, 4)?,
                Conv2d::new(s, "mid1", w[1], w[1], 3, 1, 1)?,
            ],
            dec: [
                Conv2d::new(s, "dec64", w[1] + w[0], w[0], 3, 1, 1)?,
                Conv2d::new(s, "dec128", w[0] + cin, w[0] / 2, 3, 1, 1)?,
            ],
            head: Conv2d::new(s, "head", w[0] / 2, 1, 1, 1, 1)?,
            basis: affine_basis(cfg.crop, s.dtype(), s.device())?,
        })
    }

    /// Moves the reference channels by the predicted affine.
    fn stn(&self, x: &Tensor) -> Result<Tensor> {
        let act = |c: &Conv2d, h: &Tensor| leaky_relu(&c.forward(h)?);
        let mut h = x.clone();
        for c in &self.loc {
            h = act(c, &h)?;
        }
        let theta = self.loc_fc.forward(&global_avg_pool(&h)?)?;
        let (b, _, size, _) = x.dims4()?;
        let half = size as f64 / 2.0;
        let field = (theta.reshape((b * 2, 3))?.matmul(&self.basis)? * half)?.reshape((b, 2, size, size))?;
        let refs: Vec<Tensor> = REFERENCE_CHANNELS.iter().map(|&c| x.narrow(1, c, 1)).collect::<candle_core::Result<_>>()?;
        let moved = warp(&Tensor::cat(&refs, 1)?, &RegistrationField::new(field)?)?;
        let c = x.dim(1)?;
        Ok(Tensor::cat(
            &[
                &x.narrow(1, 0, 1)?,
                &moved.narrow(1, 0, 1)?,
                &x.narrow(1, 2, 1)?,
                &moved.narrow(1, 1, 1)?,
                &x.narrow(1, BASE_CHANNELS, c - BASE_CHANNELS)?,
            ],
            1,
        )?)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let act = |c: &Conv2d, h: &Tensor| leaky_relu(&c.forward(h)?);
        let x = self.stn(x)?;
        let e0 = act(&self.enc[0], &x)?;
        let mut h = act(&self.enc[1], &e0)?;
        for c in &self.mid {
            h = act(c, &h)?;
        }
        let d64 = act(&self.dec[0], &Tensor::cat(&[&upsample(&h, 2)?, &e0], 1)?)?;
        let d128 = act(&self.dec[1], &Tensor::cat(&[&upsample(&d64, 2)?, &x], 1)?)?;
        self.head.forward(&d128)
    }
}

pub struct ExtractNetModel {
    config: ExtractConfig,
    store: ParamStore,
    net: Net,
}

impl ExtractNetModel {
    pub fn new(config: ExtractConfig, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(config.seed, dtype);
        Self::build(config, store)
    }

    fn build(config: ExtractConfig, mut store: ParamStore) -> Result<Self> {
        if config.crop < 16 || config.crop % 4 != 0 {
            return Err(Error::invalid(format!("crop side {} must be a multiple of 4, at least 16", config.crop)));
        }
        let net = Net::new(&config, &mut store)?;
        Ok(Self { config, store, net })
    }

    pub fn load(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        let (config, mut store, _) = ckpt.load::<ExtractConfig>(CHECKPOINT_KIND, dtype)?;
        store.freeze();
        Self::build(config, store)
    }

    pub fn save(&self, ckpt: &Checkpoint, metrics: serde_json::Value) -> Result<()> {
        ckpt.save(CHECKPOINT_KIND, &self.config, metrics, &self.store)
    }

    pub fn config(&self) -> &ExtractConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let want = BASE_CHANNELS + self.config.feature_channels;
        let size = self.config.crop;
        match x.dims() {
            [_, c, h, w] if *c == want && *h == size && *w == size => Ok(()),
            d => Err(Error::shape(format!("extractnet expects (B, {want}, {size}, {size}), got {d:?}"))),
        }
    }

    /// Stack with the STN applied, for inspection.
    pub fn refined_inputs(&self, stack: &ExtractInputStack) -> Result<Tensor> {
        self.check(&stack.tensor)?;
        self.net.stn(&stack.tensor.to_dtype(self.dtype())?)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.net.forward(&x.to_dtype(self.dtype())?)
    }

    /// Stroke probability in crop space.
    pub fn forward(&self, stack: &ExtractInputStack) -> Result<GrayImage> {
        let p = sigmoid(&self.logits(&stack.tensor)?.detach())?;
        GrayImage::from_tensor(&p)
    }

    /// Full-canvas mask of stroke `i`.
    pub fn extract_stroke(&self, target: &GrayImage, i: usize, prior: &PriorData, seg: &SegmentationResult) -> Result<Mask> {
        let (stack, rec) = build_inputs(target, i, prior, seg, self.config.ablation, self.config.crop)?;
        Ok(uncrop_image(&self.forward(&stack)?, &rec)?.binarize(0.5))
    }

    /// Every stroke of a character in reference order.
    pub fn extract_strokes(&self, target: &GrayImage, prior: &PriorData, seg: &SegmentationResult) -> Result<Vec<Mask>> {
        (0..prior.len())
            .map(|i| {
                self.extract_stroke(target, i, prior, seg).map_err(|e| Error::Stroke {
                    index: i,
                    stage: "extractnet",
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Intermediate and final results for one character.
pub struct Extraction {
    pub prior: PriorData,
    pub segmentation: SegmentationResult,
    pub strokes: Vec<Mask>,
}

/// The whole chain: registration prior, segmentation, then every stroke in
/// reference order.
pub fn extract_all(
    target: &GrayImage,
    reference: &Reference,
    sdnet: &SdnetModel,
    segnet: &SegnetModel,
    extractnet: &ExtractNetModel,
) -> Result<Extraction> {
    let prior = sdnet.make_prior(target, reference)?;
    let segmentation = segnet.forward(target, &prior.composite())?;
    let strokes = extractnet.extract_strokes(target, &prior, &segmentation)?;
    Ok(Extraction {
        prior,
        segmentation,
        strokes,
    })
}

/// Upstream results the extraction stage trains on, one per sample.
pub struct StageInputs {
    pub prior: PriorData,
    pub segmentation: SegmentationResult,
}

impl StageInputs {
    pub fn compute(sample: &StrokeSample, reference: &Reference, sdnet: &SdnetModel, segnet: &SegnetModel) -> Result<Self> {
        let prior = sdnet.make_prior(&sample.target_image, reference)?;
        let segmentation = segnet.forward(&sample.target_image, &prior.composite())?;
        Ok(Self { prior, segmentation })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub bce: f64,
    /// Mean full-canvas IOU of validation strokes.
    pub val_stroke_iou: f64,
}

pub struct ExtractTraining {
    pub model: ExtractNetModel,
    pub log: Vec<ExtractEpochLog>,
    pub best_epoch: usize,
    pub examples: usize,
}

/// Mean IOU of extracted strokes against ground truth.
pub fn stroke_iou(model: &ExtractNetModel, samples: &[&StrokeSample], inputs: &[&StageInputs]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, inp) in samples.iter().zip(inputs) {
        let masks = model.extract_strokes(&s.target_image, &inp.prior, &inp.segmentation)?;
        for (m, t) in masks.iter().zip(&s.stroke_masks) {
            total += m.iou(t);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// One example per `(sample, stroke)`; labels are the ground-truth stroke
/// masks cropped like the inputs. Keeps the best validation stroke IOU.
pub fn train_extractnet(
    samples: &[StrokeSample],
    inputs: &[StageInputs],
    config: ExtractConfig,
    dtype: DType,
    log_path: Option<&Path>,
) -> Result<ExtractTraining> {
    if samples.is_empty() {
        return Err(Error::invalid("extractnet needs training samples"));
    }
    if inputs.len() != samples.len() {
        return Err(Error::invalid(format!("{} stage inputs for {} samples", inputs.len(), samples.len())));
    }
    for (s, inp) in samples.iter().zip(inputs) {
        if inp.prior.len() != s.stroke_masks.len() {
            return Err(Error::sample(&s.sample_id, "prior and ground truth stroke counts differ"));
        }
    }
    let pairs: Vec<(&StrokeSample, &StageInputs)> = samples.iter().zip(inputs).collect();
    let (train, val) = crate::sdnet::holdout_split(&pairs, config.val_fraction);
    let (val_s, val_i): (Vec<_>, Vec<_>) = val.iter().copied().unzip();
    let mut examples: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(k, (s, _))| (0..s.stroke_masks.len()).map(move |i| (k, i)))
        .collect();
    let n_examples = examples.len();
    let model = ExtractNetModel::new(config.clone(), dtype)?;
    let mut opt = Adam::new(model.store.vars(), config.lr, config.lr_halve_every)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xe7);
    let mut log_file = match log_path {
        Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    for epoch in 0..config.epochs {
        opt.start_epoch(epoch);
        examples.shuffle(&mut rng);
        let drawn = config.epoch_examples.map_or(n_examples, |n| n.min(n_examples));
        let mut total = 0.0;
        for chunk in examples[..drawn].chunks(config.batch_size.max(1)) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &(k, i) in chunk {
                let (s, inp) = train[k];
                let (stack, rec) = build_inputs(&s.target_image, i, &inp.prior, &inp.segmentation, config.ablation, config.crop)?;
                xs.push(stack.tensor);
                ys.push(crop_tensor(&s.stroke_masks[i].to_tensor(&Device::Cpu)?, &rec)?);
            }
            let x = Tensor::cat(&xs, 0)?;
            let y = Tensor::cat(&ys, 0)?.to_dtype(dtype)?;
            let loss = bce_with_logits(&model.logits(&x)?, &y)?;
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
            opt.step(&loss)?;
        }
        let val_iou = stroke_iou(&model, &val_s, &val_i)?;
        log::info!("extractnet epoch {epoch}: bce {:.4} | val stroke IOU {val_iou:.4}", total / drawn as f64);
        let row = ExtractEpochLog {
            epoch,
            lr: opt.lr_for_epoch(epoch),
            bce: total / drawn as f64,
            val_stroke_iou: val_iou,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&row)?).map_err(|e| Error::io(log_path.unwrap(), e))?;
        }
        if best.as_ref().is_none_or(|b| val_iou > b.0) {
            best = Some((val_iou, epoch, model.store.snapshot()?));
        }
        log.push(row);
    }
    let best_epoch = match best {
        Some((_, epoch, snap)) => {
            model.store.restore(&snap)?;
            epoch
        }
        None => 0,
    };
    let ExtractNetModel { config, mut store, .. } = model;
    store.freeze();
    Ok(ExtractTraining {
        model: ExtractNetModel::build(config, store)?,
        log,
        best_epoch,
        examples: n_examples,
    })
}

#[cfg(test)]
mod tests;

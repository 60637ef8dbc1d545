//! Prior-guided multi-label segmentation into the seven stroke categories.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{StrokeSample, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, global_avg_pool, leaky_relu, resize_bilinear, sigmoid, Adam, Checkpoint, Conv2d, ParamStore};
use crate::prior::{category_composite, PriorData};
use crate::raster::{images_to_tensor, GrayImage, Mask, CANVAS};

pub const CHECKPOINT_KIND: &str = "segnet";
/// Largest per-stroke prior offset used for augmentation, pixels.
pub const MAX_JITTER: i64 = 5;
/// Side of the decoder feature map handed to the extraction stage.
pub const FEATURE_SIZE: usize = 64;

const BASE: [usize; 5] = [32, 128, 256, 256, 256];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegnetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub channel_scale: f64,
    /// Zeroes the prior channel in training and inference.
    #[serde(default)]
    pub no_prior: bool,
    /// Per-stroke prior offset augmentation during training.
    pub jitter: bool,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SegnetConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 1e-4,
            lr_halve_every: 2,
            channel_scale: 1.0,
            no_prior: false,
            jitter: true,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SegnetConfig {
    fn widths(&self) -> [usize; 5] {
        BASE.map(|b| ((b as f64 * self.channel_scale).round() as usize).max(4))
    }

    /// Channels of the 64x64 feature map.
    pub fn feature_channels(&self) -> usize {
        self.widths()[1]
    }
}

/// Integer offsets in `[-MAX_JITTER, MAX_JITTER]^2`, one per stroke.
pub fn jitter_offsets(n: usize, rng: &mut impl Rng) -> Vec<(i64, i64)> {
    (0..n)
        .map(|_| (rng.gen_range(-MAX_JITTER..=MAX_JITTER), rng.gen_range(-MAX_JITTER..=MAX_JITTER)))
        .collect()
}

/// Prior composite with every stroke shifted by its own random offset.
pub fn jitter_prior(prior: &PriorData, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = jitter_offsets(prior.len(), &mut rng);
    shifted_composite(prior, &offsets)
}

pub fn shifted_composite(prior: &PriorData, offsets: &[(i64, i64)]) -> GrayImage {
    let masks: Vec<Mask> = prior
        .strokes
        .iter()
        .zip(offsets)
        .map(|(s, &(dx, dy))| s.mask.translated(dx, dy))
        .collect();
    category_composite(&masks, &prior.categories())
}

/// Union of the ground-truth masks of each category.
pub fn category_labels(sample: &StrokeSample) -> Vec<Mask> {
    let (w, h) = (sample.target_image.width(), sample.target_image.height());
    let mut labels = vec![Mask::new(w, h); NUM_CATEGORIES];
    for (m, &c) in sample.stroke_masks.iter().zip(&sample.categories) {
        labels[c as usize].union_with(m);
    }
    labels
}

fn labels_tensor(labels: &[Mask], dtype: DType, device: &Device) -> Result<Tensor> {
    let ts = labels.iter().map(|m| m.to_tensor(device)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 1)?.to_dtype(dtype)?)
}

pub struct SegmentationResult {
    /// `(7, 256, 256)` probabilities.
    pub probs: Tensor,
    /// `probs >= 0.5`, per category.
    pub masks: Vec<Mask>,
    /// `(C, 64, 64)` decoder features.
    pub feature64: Tensor,
}

impl SegmentationResult {
    pub fn category_prob(&self, category: u8) -> Result<GrayImage> {
        GrayImage::from_tensor(&self.probs.narrow(0, category as usize, 1)?)
    }

    /// Most probable category per pixel, `None` where every probability is
    /// below 0.5.
    pub fn argmax(&self) -> Result<Vec<Option<u8>>> {
        let p = self.probs.to_dtype(DType::F32)?.flatten_from(1)?.to_vec2::<f32>()?;
        let n = p[0].len();
        Ok((0..n)
            .map(|i| {
                let (c, v) = (0..p.len()).map(|c| (c, p[c][i])).fold((0, f32::MIN), |a, b| if b.1 > a.1 { b } else { a });
                (v >= 0.5).then_some(c as u8)
            })
            .collect())
    }
}

struct Net {
    stem: [Conv2d; 4],
    res: [Conv2d; 4],
    aspp: [Conv2d; 4],
    project: Conv2d,
    low: Conv2d,
    dec64: Conv2d,
    dec128: Conv2d,
    head: Conv2d,
}

impl Net {
    fn new(cfg: &SegnetConfig, s: &mut ParamStore) -> Result<Self> {
        let w = cfg.widths();
        Ok(Self {
            stem: [
                Conv2d::new(s, "stem0", 2, w[0], 3, 2, 1)?,
                Conv2d::new(s, "stem1", w[0], w[1], 3, 2, 1)?,
                Conv2d::new(s, "stem2", w[1], w[2], 3, 2, 1)?,
                Conv2d::new(s, "stem3", w[2], w[3], 3, 2, 1)?,
            ],
            res: [
                Conv2d::new(s, "res0a", w[3], w[3], 3, 1, 2)?,
                Conv2d::new(s, "res0b", w[3], w[3], 3, 1, 2)?,
                Conv2d::new(s, "res1a", w[3], w[3], 3, 1, 4)?,
                Conv2d::new(s, "res1b", w[3], w[3], 3, 1, 4)?,
            ],
            aspp: [
                Conv2d::new(s, "aspp1", w[3], w[4], 1, 1, 1)?,
                Conv2d::new(s, "aspp2", w[3], w[4], 3, 1, 2)?,
                Conv2d::new(s, "aspp4", w[3], w[4], 3, 1, 4)?,
                Conv2d::new(s, "aspp_pool", w[3], w[4], 1, 1, 1)?,
            ],
            project: Conv2d::new(s, "aspp_proj", 4 * w[4], w[4], 1, 1, 1)?,
            low: Conv2d::new(s, "low64", w[1], w[1] / 2, 1, 1, 1)?,
            dec64: Conv2d::new(s, "dec64", w[4] + w[1] / 2, w[1], 3, 1, 1)?,
            dec128: Conv2d::new(s, "dec128", w[1] + w[0], w[0], 3, 1, 1)?,
            head: Conv2d::new(s, "head", w[0], NUM_CATEGORIES, 1, 1, 1)?,
        })
    }

    /// Returns `(logits at 256, features at 64)`.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let act = |c: &Conv2d, h: &Tensor| leaky_relu(&c.forward(h)?);
        let s128 = act(&self.stem[0], x)?;
        let s64 = act(&self.stem[1], &s128)?;
        let s32 = act(&self.stem[2], &s64)?;
        let mut h = act(&self.stem[3], &s32)?;
        for pair in self.res.chunks(2) {
            let r = pair[1].forward(&act(&pair[0], &h)?)?;
            h = leaky_relu(&(h + r)?)?;
        }
        let (_, _, hh, ww) = h.dims4()?;
        let pooled = global_avg_pool(&h)?.unsqueeze(2)?.unsqueeze(3)?;
        let pooled = act(&self.aspp[3], &pooled)?.repeat((1, 1, hh, ww))?;
        let branches = [
            act(&self.aspp[0], &h)?,
            act(&self.aspp[1], &h)?,
            act(&self.aspp[2], &h)?,
            pooled,
        ];
        let a = act(&self.project, &Tensor::cat(&branches, 1)?)?;
        let up = resize_bilinear(&a, FEATURE_SIZE, FEATURE_SIZE)?;
        let f64_ = act(&self.dec64, &Tensor::cat(&[&up, &act(&self.low, &s64)?], 1)?)?;
        let up = resize_bilinear(&f64_, 128, 128)?;
        let d128 = act(&self.dec128, &Tensor::cat(&[&up, &s128], 1)?)?;
        let logits = resize_bilinear(&self.head.forward(&d128)?, CANVAS, CANVAS)?;
        Ok((logits, f64_))
    }
}

pub struct SegnetModel {
    config: SegnetConfig,
    store: ParamStore,
    net: Net,
}

impl SegnetModel {
    pub fn new(config: SegnetConfig, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(config.seed, dtype);
        Self::build(config, store)
    }

    fn build(config: SegnetConfig, mut store: ParamStore) -> Result<Self> {
        let net = Net::new(&config, &mut store)?;
        Ok(Self { config, store, net })
    }

    pub fn load(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        let (config, mut store, _) = ckpt.load::<SegnetConfig>(CHECKPOINT_KIND, dtype)?;
        store.freeze();
        Self::build(config, store)
    }

    pub fn save(&self, ckpt: &Checkpoint, metrics: serde_json::Value) -> Result<()> {
        ckpt.save(CHECKPOINT_KIND, &self.config, metrics, &self.store)
    }

    pub fn config(&self) -> &SegnetConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn inputs(&self, targets: &[&GrayImage], priors: &[&GrayImage]) -> Result<Tensor> {
        for img in targets.iter().chain(priors) {
            if (img.width(), img.height()) != (CANVAS, CANVAS) {
                return Err(Error::shape(format!(
                    "segnet expects {CANVAS}x{CANVAS} inputs, got {}x{}",
                    img.width(),
                    img.height()
                )));
            }
        }
        let dev = self.store.device();
        let t = images_to_tensor(targets, self.dtype(), dev)?;
        let mut p = images_to_tensor(priors, self.dtype(), dev)?;
        if self.config.no_prior {
            p = p.zeros_like()?;
        }
        Ok(Tensor::cat(&[&t, &p], 1)?)
    }

    /// `(logits (B, 7, 256, 256), features (B, C, 64, 64))`.
    fn logits(&self, targets: &[&GrayImage], priors: &[&GrayImage]) -> Result<(Tensor, Tensor)> {
        self.net.forward(&self.inputs(targets, priors)?)
    }

    pub fn forward(&self, target: &GrayImage, prior_composite: &GrayImage) -> Result<SegmentationResult> {
        let (logits, feat) = self.logits(&[target], &[prior_composite])?;
        let probs = sigmoid(&logits.detach())?.squeeze(0)?;
        let masks = (0..NUM_CATEGORIES)
            .map(|c| Ok(GrayImage::from_tensor(&probs.narrow(0, c, 1)?)?.binarize(0.5)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentationResult {
            probs,
            masks,
            feature64: feat.detach().squeeze(0)?,
        })
    }
}

/// Per-category and mean IOU over a sample set; categories absent from both
/// prediction and truth are skipped in the mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CategoryIou {
    pub per_category: Vec<Option<f64>>,
    #[serde(rename = "mIOU")]
    pub mean: f64,
}

pub fn category_iou(model: &SegnetModel, samples: &[&StrokeSample], priors: &[&PriorData]) -> Result<CategoryIou> {
    let mut inter = [0usize; NUM_CATEGORIES];
    let mut union = [0usize; NUM_CATEGORIES];
    for (s, p) in samples.iter().zip(priors) {
        let seg = model.forward(&s.target_image, &p.composite())?;
        for (c, truth) in category_labels(s).iter().enumerate() {
            inter[c] += seg.masks[c].intersection_count(truth);
            union[c] += seg.masks[c].union_count(truth);
        }
    }
    let per_category: Vec<Option<f64>> = (0..NUM_CATEGORIES)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let present: Vec<f64> = per_category.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(CategoryIou { per_category, mean })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegnetEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub bce: f64,
    pub val: CategoryIou,
}

pub struct SegnetTraining {
    pub model: SegnetModel,
    pub log: Vec<SegnetEpochLog>,
    pub best_epoch: usize,
}

/// Trains against per-category unions of the ground-truth masks, keeping the
/// parameters with the best validation mIOU. `priors[i]` belongs to
/// `samples[i]`.
pub fn train_segnet(
    samples: &[StrokeSample],
    priors: &[PriorData],
    config: SegnetConfig,
    dtype: DType,
    log_path: Option<&Path>,
) -> Result<SegnetTraining> {
    if samples.is_empty() {
        return Err(Error::invalid("segnet needs training samples"));
    }
    if priors.len() != samples.len() {
        return Err(Error::invalid(format!("{} priors for {} samples", priors.len(), samples.len())));
    }
    let pairs: Vec<(&StrokeSample, &PriorData)> = samples.iter().zip(priors).collect();
    let (train, val) = crate::sdnet::holdout_split(&pairs, config.val_fraction);
    let (val_s, val_p): (Vec<_>, Vec<_>) = val.iter().copied().unzip();
    let model = SegnetModel::new(config.clone(), dtype)?;
    let mut opt = Adam::new(model.store.vars(), config.lr, config.lr_halve_every)?;
    let dev = model.store.device().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e6e);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log_file = match log_path {
        Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    for epoch in 0..config.epochs {
        opt.start_epoch(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<_> = chunk.iter().map(|&i| train[i]).collect();
            let composites: Vec<GrayImage> = batch
                .iter()
                .map(|(_, p)| {
                    if config.jitter {
                        let offsets = jitter_offsets(p.len(), &mut rng);
                        shifted_composite(p, &offsets)
                    } else {
                        p.composite()
                    }
                })
                .collect();
            let targets: Vec<&GrayImage> = batch.iter().map(|(s, _)| &s.target_image).collect();
            let (logits, _) = model.logits(&targets, &composites.iter().collect::<Vec<_>>())?;
            let labels = batch
                .iter()
                .map(|(s, _)| labels_tensor(&category_labels(s), dtype, &dev))
                .collect::<Result<Vec<_>>>()?;
            let loss = bce_with_logits(&logits, &Tensor::cat(&labels, 0)?)?;
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * batch.len() as f64;
            opt.step(&loss)?;
        }
        let val = category_iou(&model, &val_s, &val_p)?;
        log::info!("segnet epoch {epoch}: bce {:.4} | val mIOU {:.4}", total / train.len() as f64, val.mean);
        let row = SegnetEpochLog {
            epoch,
            lr: opt.lr_for_epoch(epoch),
            bce: total / train.len() as f64,
            val,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&row)?).map_err(|e| Error::io(log_path.unwrap(), e))?;
        }
        if best.as_ref().is_none_or(|b| row.val.mean > b.0) {
            best = Some((row.val.mean, epoch, model.store.snapshot()?));
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
    let SegnetModel { config, mut store, .. } = model;
    store.freeze();
    Ok(SegnetTraining {
        model: SegnetModel::build(config, store)?,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::StrokePrior;
    use crate::field::AffineStrokeTransform;

    fn dot_prior() -> PriorData {
        let mut a = Mask::canvas();
        let mut b = Mask::canvas();
        for y in 100..110 {
            for x in 100..110 {
                a.set(x, y, true);
                b.set(x + 50, y, true);
            }
        }
        PriorData {
            strokes: vec![
                StrokePrior { mask: a, transform: AffineStrokeTransform::identity(), category: 0 },
                StrokePrior { mask: b, transform: AffineStrokeTransform::identity(), category: 4 },
            ],
        }
    }

    #[test]
    fn jitter_bound_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let offs = jitter_offsets(1000, &mut rng);
        let max = offs.iter().map(|&(x, y)| x.abs().max(y.abs())).max().unwrap();
        assert_eq!(max, MAX_JITTER);
    }

    #[test]
    fn jitter_is_seeded_and_zero_offset_is_identity() {
        let p = dot_prior();
        assert_eq!(jitter_prior(&p, 3), jitter_prior(&p, 3));
        assert_eq!(shifted_composite(&p, &[(0, 0), (0, 0)]), p.composite());
        let moved = shifted_composite(&p, &[(2, -3), (0, 0)]);
        assert_eq!(moved.get(102, 97), crate::prior::category_value(0));
        let mut values: Vec<u32> = moved.data().iter().map(|v| v.to_bits()).collect();
        values.sort();
        values.dedup();
        assert_eq!(values.len(), 3);
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = SegnetConfig { channel_scale: 0.125, ..Default::default() };
        let model = SegnetModel::new(cfg.clone(), DType::F32).unwrap();
        let p = dot_prior();
        let seg = model.forward(&p.composite(), &p.composite()).unwrap();
        assert_eq!(seg.probs.dims(), &[7, 256, 256]);
        assert_eq!(seg.feature64.dims(), &[cfg.feature_channels(), 64, 64]);
        let v = seg.probs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        for (c, m) in seg.masks.iter().enumerate() {
            let prob = seg.category_prob(c as u8).unwrap();
            assert_eq!(*m, prob.binarize(0.5));
        }
        let again = model.forward(&p.composite(), &p.composite()).unwrap();
        let w = again.probs.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, w);
        assert!(model.forward(&GrayImage::new(64, 64), &p.composite()).is_err());
    }
}

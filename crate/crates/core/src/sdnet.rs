//! Structure-deformable registration: a U-shaped network predicting the main
//! field and a coarse fine-tuning branch, trained so that each reference
//! stroke region of the combined field is well described by one affine map.

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
use crate::field::{compose_fields, invert_field, smoothness, warp, LinearEstimator, RegionMask, RegistrationField};
use crate::metrics::{evaluate_registration, SampleStrokes};
use crate::nn::{leaky_relu, resize_bilinear, upsample, Adam, Checkpoint, Conv2d, ParamStore};
use crate::prior::{PriorData, Reference, StrokePrior};
use crate::raster::{images_to_tensor, masks_to_tensor, GrayImage, Mask, CANVAS};
use crate::recognition::RecognitionFeaturizer;
use crate::similarity::ContentNet;

pub const CHECKPOINT_KIND: &str = "sdnet";

/// Network outputs are multiplied by this so that small weights reach
/// displacements of tens of pixels.
const FIELD_SCALE: f64 = 8.0;
/// Fixed-point iterations for the dense inverse used by the single-field
/// variant.
const INVERSE_ITERATIONS: usize = 12;

const ENC_BASE: [usize; 5] = [16, 32, 64, 128, 256];
const DEC_BASE: [usize; 6] = [256, 128, 64, 32, 16, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdnetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    /// Weight of the per-stroke linear term.
    pub lambda: f64,
    /// Weight of the smoothness term.
    pub gamma: f64,
    pub phi_e_weight: f64,
    /// Multiplies every layer width.
    pub channel_scale: f64,
    /// Drops the fine-tuning branch and the linear term; priors then come from
    /// the dense field alone.
    #[serde(default)]
    pub single_field: bool,
    /// Fraction of the training samples held back for model selection.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SdnetConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            lr: 1e-4,
            lr_halve_every: 10,
            lambda: 0.5,
            gamma: 5.0,
            phi_e_weight: 0.5,
            channel_scale: 1.0,
            single_field: false,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SdnetConfig {
    fn width(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(2)
    }

    /// Weights actually applied: the single-field variant has no linear term.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: if self.single_field { 0.0 } else { self.lambda },
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
}

/// The three fields for a batch.
pub struct Fields {
    pub phi_d: RegistrationField,
    pub phi_e: RegistrationField,
    pub phi_s: RegistrationField,
}

struct Net {
    enc: Vec<Conv2d>,
    dec: Vec<Conv2d>,
    head: Conv2d,
    branch: Option<Conv2d>,
}

impl Net {
    fn new(cfg: &SdnetConfig, rec_widths: [usize; 4], store: &mut ParamStore) -> Result<Self> {
        let e: Vec<usize> = ENC_BASE.iter().map(|&b| cfg.width(b)).collect();
        let d: Vec<usize> = DEC_BASE.iter().map(|&b| cfg.width(b)).collect();
        // Skip widths at 64, 32, 16, 8 include the injected recognition features
        // of both inputs.
        let skip: Vec<usize> = (0..4).map(|i| e[i + 1] + 2 * rec_widths[i]).collect();
        let mut enc = vec![Conv2d::new(store, "enc0", 2, e[0], 3, 2, 1)?];
        enc.push(Conv2d::new(store, "enc1", e[0], e[1], 3, 2, 1)?);
        for i in 2..5 {
            enc.push(Conv2d::new(store, &format!("enc{i}"), skip[i - 2], e[i], 3, 2, 1)?);
        }
        let dec = vec![
            Conv2d::new(store, "dec8", skip[3], d[0], 3, 1, 1)?,
            Conv2d::new(store, "dec16", d[0] + skip[2], d[1], 3, 1, 1)?,
            Conv2d::new(store, "dec32", d[1] + skip[1], d[2], 3, 1, 1)?,
            Conv2d::new(store, "dec64", d[2] + skip[0], d[3], 3, 1, 1)?,
            Conv2d::new(store, "dec128", d[3] + e[0], d[4], 3, 1, 1)?,
            Conv2d::new(store, "dec256", d[4] + 2, d[5], 3, 1, 1)?,
        ];
        let head = Conv2d::zeroed(store, "head", d[5], 2, 3)?;
        let branch = if cfg.single_field {
            None
        } else {
            Some(Conv2d::zeroed(store, "branch", d[2], 2, 3)?)
        };
        Ok(Self { enc, dec, head, branch })
    }

    /// `x: (B, 2, 256, 256)`; `ft`, `fr`: recognition features of target and
    /// reference. Returns `(phi_d, phi_e)` where `phi_e` is absent for the
    /// single-field variant.
    fn forward(&self, x: &Tensor, ft: &[Tensor; 4], fr: &[Tensor; 4]) -> Result<(Tensor, Option<Tensor>)> {
        let act = |conv: &Conv2d, h: &Tensor| leaky_relu(&conv.forward(h)?);
        let e0 = act(&self.enc[0], x)?;
        let e1 = act(&self.enc[1], &e0)?;
        let mut skips = vec![Tensor::cat(&[&e1, &ft[0], &fr[0]], 1)?];
        for i in 2..5 {
            let e = act(&self.enc[i], &skips[i - 2])?;
            skips.push(Tensor::cat(&[&e, &ft[i - 1], &fr[i - 1]], 1)?);
        }
        let d8 = act(&self.dec[0], &skips[3])?;
        let d16 = act(&self.dec[1], &Tensor::cat(&[&upsample(&d8, 2)?, &skips[2]], 1)?)?;
        let d32 = act(&self.dec[2], &Tensor::cat(&[&upsample(&d16, 2)?, &skips[1]], 1)?)?;
        let d64 = act(&self.dec[3], &Tensor::cat(&[&upsample(&d32, 2)?, &skips[0]], 1)?)?;
        let d128 = act(&self.dec[4], &Tensor::cat(&[&upsample(&d64, 2)?, &e0], 1)?)?;
        let d256 = act(&self.dec[5], &Tensor::cat(&[&upsample(&d128, 2)?, x], 1)?)?;
        let phi_d = (self.head.forward(&d256)? * FIELD_SCALE)?;
        let phi_e = match &self.branch {
            Some(conv) => {
                let up = resize_bilinear(&d32, 128, 128)?;
                let e = conv.forward(&up)?;
                Some((resize_bilinear(&e, CANVAS, CANVAS)? * FIELD_SCALE)?)
            }
            None => None,
        };
        Ok((phi_d, phi_e))
    }
}

pub struct SdnetModel {
    config: SdnetConfig,
    store: ParamStore,
    net: Net,
    recognizer: RecognitionFeaturizer,
}

/// Loss terms of one sample; `sum` is the weighted total.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub sum: Tensor,
    pub single: Tensor,
    pub global: Tensor,
    pub smooth: Tensor,
}

impl LossParts {
    pub fn values(&self) -> Result<[f64; 4]> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok([v(&self.sum)?, v(&self.single)?, v(&self.global)?, v(&self.smooth)?])
    }
}

fn regions(masks: &[Mask]) -> Result<Vec<RegionMask>> {
    masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            RegionMask::new(m.clone()).map_err(|e| Error::Stroke {
                index: i,
                stage: "sdnet",
                source: Box::new(e),
            })
        })
        .collect()
}

/// The training objective for one sample:
/// `lambda * L_single + L_global + gamma * L_smooth`.
///
/// `t`, `r`: `(1, 1, H, W)` target and reference; `t_s`: `(n, 1, H, W)`
/// target strokes; `r_s`: reference stroke masks, which also select the
/// regions of `phi_s` for the linear estimates.
pub fn loss_sum(
    content: &ContentNet,
    t: &Tensor,
    r: &Tensor,
    t_s: &Tensor,
    r_s: &[Mask],
    phi_d: &RegistrationField,
    phi_s: &RegistrationField,
    weights: LossWeights,
) -> Result<LossParts> {
    let n = t_s.dim(0)?;
    if n != r_s.len() {
        return Err(Error::invalid(format!("{n} target strokes vs {} reference strokes", r_s.len())));
    }
    let dtype = t.dtype();
    let global = content.s_c(r, &warp(t, phi_d)?)?.mean_all()?;
    let smooth = smoothness(phi_d)?;
    let single = if weights.lambda == 0.0 || n == 0 {
        Tensor::zeros((), dtype, t.device())?
    } else {
        let est = LinearEstimator::new(&regions(r_s)?, dtype, t.device())?;
        let fields = est.linear_fields(&est.coefficients(phi_s)?)?;
        let moved = warp(t_s, &RegistrationField::new(fields)?)?;
        let refs = masks_to_tensor(r_s, dtype, t.device())?;
        content.s_c(&refs, &moved)?.mean_all()?
    };
    let sum = (((&single * weights.lambda)? + &global)? + (&smooth * weights.gamma)?)?;
    Ok(LossParts {
        sum,
        single,
        global,
        smooth,
    })
}

impl SdnetModel {
    pub fn new(config: SdnetConfig, recognizer: RecognitionFeaturizer, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(config.seed, dtype);
        Self::build(config, store, recognizer)
    }

    fn build(config: SdnetConfig, mut store: ParamStore, recognizer: RecognitionFeaturizer) -> Result<Self> {
        let net = Net::new(&config, recognizer.feature_widths(), &mut store)?;
        Ok(Self {
            config,
            store,
            net,
            recognizer,
        })
    }

    pub fn load(ckpt: &Checkpoint, recognizer: RecognitionFeaturizer, dtype: DType) -> Result<Self> {
        let (config, mut store, _) = ckpt.load::<SdnetConfig>(CHECKPOINT_KIND, dtype)?;
        store.freeze();
        Self::build(config, store, recognizer)
    }

    pub fn save(&self, ckpt: &Checkpoint, metrics: serde_json::Value) -> Result<()> {
        ckpt.save(CHECKPOINT_KIND, &self.config, metrics, &self.store)
    }

    pub fn config(&self) -> &SdnetConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Fields for a batch of targets `(B, 1, 256, 256)` against their
    /// references: `reference` is the plain composite, `labeled` the
    /// stroke-labeled image.
    pub fn forward(&self, target: &Tensor, reference: &Tensor, labeled: &Tensor) -> Result<Fields> {
        let dims = target.dims();
        if dims.len() != 4 || dims[1] != 1 || dims[2] != CANVAS || dims[3] != CANVAS {
            return Err(Error::shape(format!("sdnet expects (B, 1, 256, 256) targets, got {dims:?}")));
        }
        if reference.dims() != dims || labeled.dims() != dims {
            return Err(Error::shape(format!(
                "sdnet inputs differ: target {dims:?}, reference {:?}, labeled {:?}",
                reference.dims(),
                labeled.dims()
            )));
        }
        let ft = self.recognizer.features(target)?.0;
        let fr = self.recognizer.features(reference)?.0;
        let x = Tensor::cat(&[target, labeled], 1)?.to_dtype(self.dtype())?;
        let (phi_d, phi_e) = self.net.forward(&x, &ft, &fr)?;
        let phi_d = RegistrationField::new(phi_d)?;
        let phi_e = match phi_e {
            Some(e) => RegistrationField::new(e)?,
            None => RegistrationField::new(phi_d.tensor().zeros_like()?)?,
        };
        let weight = if self.config.single_field { 0.0 } else { self.config.phi_e_weight };
        let phi_s = compose_fields(&phi_d, &phi_e, weight)?;
        Ok(Fields { phi_d, phi_e, phi_s })
    }

    fn forward_one(&self, target: &GrayImage, reference: &Reference) -> Result<Fields> {
        let dev = self.store.device().clone();
        let t = target.to_tensor(&dev)?.to_dtype(self.dtype())?;
        let r = reference.image.to_tensor(&dev)?.to_dtype(self.dtype())?;
        let l = reference.labeled.to_tensor(&dev)?.to_dtype(self.dtype())?;
        self.forward(&t, &r, &l)
    }

    /// Per-stroke prior for one target.
    ///
    /// Each reference stroke region of `phi_s` yields a linear estimate
    /// `T(p) = p + c + G (p - P)` taking reference points to target points;
    /// the stroke is rendered through it. The single-field variant warps each
    /// stroke by a dense inverse of `phi_d` instead.
    pub fn make_prior(&self, target: &GrayImage, reference: &Reference) -> Result<PriorData> {
        let fields = self.forward_one(target, reference)?;
        let phi_s = RegistrationField::new(fields.phi_s.tensor().detach())?;
        let est = LinearEstimator::new(&regions(&reference.masks)?, DType::F64, self.store.device())?;
        let phi_s64 = RegistrationField::new(phi_s.tensor().to_dtype(DType::F64)?)?;
        let transforms = est.transforms(&est.coefficients(&phi_s64)?)?;
        if !self.config.single_field {
            return crate::prior::prior_from_transforms(reference, &transforms);
        }
        let psi = invert_field(&RegistrationField::new(fields.phi_d.tensor().detach())?, INVERSE_ITERATIONS)?;
        let dev = self.store.device();
        let strokes = images_to_tensor(&reference.strokes.iter().collect::<Vec<_>>(), psi.tensor().dtype(), dev)?;
        let moved = warp(&strokes, &psi)?;
        let strokes = (0..reference.len())
            .map(|i| {
                let img = GrayImage::from_tensor(&moved.narrow(0, i, 1)?)?;
                Ok(StrokePrior {
                    mask: img.binarize(0.5),
                    transform: transforms[i].clone(),
                    category: reference.categories[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PriorData { strokes })
    }
}

/// One row of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdnetEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_sum: f64,
    pub l_single: f64,
    pub l_sim_global: f64,
    pub l_smooth: f64,
    #[serde(rename = "val_mDis")]
    pub val_m_dis: f64,
    #[serde(rename = "val_mBIou")]
    pub val_m_biou: f64,
}

/// Registration quality `(mDis, mBIou)` of a model's priors.
pub fn validate(model: &SdnetModel, samples: &[&StrokeSample], refs: &BTreeMap<u32, Reference>) -> Result<(f64, f64)> {
    let mut priors = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for s in samples {
        let r = reference_for(refs, s)?;
        priors.push(SampleStrokes {
            sample_id: s.sample_id.clone(),
            masks: model.make_prior(&s.target_image, r)?.masks(),
        });
        truth.push(SampleStrokes {
            sample_id: s.sample_id.clone(),
            masks: s.stroke_masks.clone(),
        });
    }
    let eval = evaluate_registration(&priors, &truth)?;
    Ok((eval.m_dis(), eval.m_biou()))
}

pub(crate) fn reference_for<'a>(refs: &'a BTreeMap<u32, Reference>, s: &StrokeSample) -> Result<&'a Reference> {
    refs.get(&s.layout_id)
        .ok_or_else(|| Error::sample(&s.sample_id, format!("layout {} not in the reference set", s.layout_id)))
}

/// Splits off the last `fraction` of samples (at least one) for validation.
pub(crate) fn holdout_split<T>(items: &[T], fraction: f64) -> (&[T], &[T]) {
    let n = items.len();
    let n_val = ((n as f64 * fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let (train, val) = items.split_at(n - n_val);
    if val.is_empty() {
        (train, train)
    } else {
        (train, val)
    }
}

pub struct SdnetTraining {
    pub model: SdnetModel,
    pub log: Vec<SdnetEpochLog>,
    pub best_epoch: usize,
    pub best: (f64, f64),
}

/// Trains on `samples` with the frozen similarity and recognition nets,
/// keeping the parameters with the lowest validation mDis.
pub fn train_sdnet(
    samples: &[StrokeSample],
    refs: &BTreeMap<u32, Reference>,
    content: &ContentNet,
    recognizer: RecognitionFeaturizer,
    config: SdnetConfig,
    log_path: Option<&Path>,
) -> Result<SdnetTraining> {
    if samples.is_empty() {
        return Err(Error::invalid("sdnet needs training samples"));
    }
    let (train, val) = holdout_split(samples, config.val_fraction);
    let val: Vec<&StrokeSample> = val.iter().collect();
    let dtype = content.dtype();
    let model = SdnetModel::new(config.clone(), recognizer, dtype)?;
    let mut opt = Adam::new(model.store.vars(), config.lr, config.lr_halve_every)?;
    let weights = config.loss_weights();
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5d5d);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log_file = match log_path {
        Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, BTreeMap<String, Tensor>)> = None;
    for epoch in 0..config.epochs {
        opt.start_epoch(epoch);
        order.shuffle(&mut rng);
        let mut totals = [0f64; 4];
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&StrokeSample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch_refs = batch.iter().map(|s| reference_for(refs, s)).collect::<Result<Vec<_>>>()?;
            let t = images_to_tensor(&batch.iter().map(|s| &s.target_image).collect::<Vec<_>>(), dtype, &dev)?;
            let r = images_to_tensor(&batch_refs.iter().map(|r| &r.image).collect::<Vec<_>>(), dtype, &dev)?;
            let l = images_to_tensor(&batch_refs.iter().map(|r| &r.labeled).collect::<Vec<_>>(), dtype, &dev)?;
            let fields = model.forward(&t, &r, &l)?;
            let mut loss: Option<Tensor> = None;
            for (b, (s, rf)) in batch.iter().zip(&batch_refs).enumerate() {
                let phi_d = fields.phi_d.item(b)?;
                let phi_s = fields.phi_s.item(b)?;
                let t_s = masks_to_tensor(&s.stroke_masks, dtype, &dev)?;
                let parts = loss_sum(
                    content,
                    &t.narrow(0, b, 1)?,
                    &r.narrow(0, b, 1)?,
                    &t_s,
                    &rf.masks,
                    &phi_d,
                    &phi_s,
                    weights,
                )?;
                for (acc, v) in totals.iter_mut().zip(parts.values()?) {
                    *acc += v;
                }
                loss = Some(match loss {
                    Some(l) => (l + parts.sum)?,
                    None => parts.sum,
                });
            }
            let loss = (loss.expect("non-empty batch") / batch.len() as f64)?;
            opt.step(&loss)?;
        }
        let n = train.len() as f64;
        let (m_dis, m_biou) = validate(&model, &val, refs)?;
        let row = SdnetEpochLog {
            epoch,
            lr: opt.lr_for_epoch(epoch),
            l_sum: totals[0] / n,
            l_single: totals[1] / n,
            l_sim_global: totals[2] / n,
            l_smooth: totals[3] / n,
            val_m_dis: m_dis,
            val_m_biou: m_biou,
        };
        log::info!(
            "sdnet epoch {epoch}: L_sum {:.4} single {:.4} global {:.4} smooth {:.5} | val mDis {m_dis:.3} mBIou {m_biou:.3}",
            row.l_sum,
            row.l_single,
            row.l_sim_global,
            row.l_smooth
        );
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&row)?).map_err(|e| Error::io(log_path.unwrap(), e))?;
        }
        log.push(row);
        if best.as_ref().is_none_or(|b| m_dis < b.0) {
            best = Some((m_dis, m_biou, epoch, model.store.snapshot()?));
        }
    }
    let (best_dis, best_biou, best_epoch, snapshot) = match best {
        Some(b) => b,
        None => {
            let (d, b) = validate(&model, &val, refs)?;
            (d, b, 0, model.store.snapshot()?)
        }
    };
    model.store.restore(&snapshot)?;
    let SdnetModel {
        config,
        mut store,
        recognizer,
        ..
    } = model;
    store.freeze();
    let model = SdnetModel::build(config, store, recognizer)?;
    Ok(SdnetTraining {
        model,
        log,
        best_epoch,
        best: (best_dis, best_biou),
    })
}

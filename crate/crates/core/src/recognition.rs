//! Character classifier whose intermediate activations feed the SDNet encoder.

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, leaky_relu, Adam, Checkpoint, Conv2d, Linear, ParamStore};
use crate::raster::{GrayImage, CANVAS};

pub const CHECKPOINT_KIND: &str = "recognizer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    /// Widths of the five stride-2 stages (256 down to 8).
    pub widths: [usize; 5],
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub seed: u64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            widths: [4, 8, 8, 16, 16],
            num_classes: 1,
            epochs: 6,
            batch_size: 8,
            lr: 1e-3,
            lr_halve_every: 3,
            seed: 0,
        }
    }
}

/// Activations at 64, 32, 16 and 8 pixels.
pub struct RecognitionFeatures(pub [Tensor; 4]);

pub struct RecognitionFeaturizer {
    config: RecognizerConfig,
    store: ParamStore,
    stages: [Conv2d; 5],
    head: Linear,
}

impl RecognitionFeaturizer {
    pub fn new(config: RecognizerConfig, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(config.seed, dtype);
        Self::build(config, store)
    }

    fn build(config: RecognizerConfig, mut store: ParamStore) -> Result<Self> {
        if config.num_classes == 0 {
            return Err(Error::invalid("recognizer needs at least one class"));
        }
        let w = config.widths;
        let s = &mut store;
        let stages = [
            Conv2d::new(s, "rec0", 1, w[0], 3, 2, 1)?,
            Conv2d::new(s, "rec1", w[0], w[1], 3, 2, 1)?,
            Conv2d::new(s, "rec2", w[1], w[2], 3, 2, 1)?,
            Conv2d::new(s, "rec3", w[2], w[3], 3, 2, 1)?,
            Conv2d::new(s, "rec4", w[3], w[4], 3, 2, 1)?,
        ];
        let head = Linear::new(s, "head", w[4], config.num_classes)?;
        Ok(Self {
            config,
            store,
            stages,
            head,
        })
    }

    pub fn load(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        let (config, mut store, _) = ckpt.load::<RecognizerConfig>(CHECKPOINT_KIND, dtype)?;
        store.freeze();
        Self::build(config, store)
    }

    pub fn save(&self, ckpt: &Checkpoint, metrics: serde_json::Value) -> Result<()> {
        ckpt.save(CHECKPOINT_KIND, &self.config, metrics, &self.store)
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    /// Channel counts of the four exposed feature maps.
    pub fn feature_widths(&self) -> [usize; 4] {
        let w = self.config.widths;
        [w[1], w[2], w[3], w[4]]
    }

    fn run(&self, x: &Tensor) -> Result<(RecognitionFeatures, Tensor)> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h != CANVAS || w != CANVAS {
            return Err(Error::shape(format!("recognizer expects (B, 1, 256, 256), got {:?}", x.dims())));
        }
        let mut h = x.to_dtype(self.store.dtype())?;
        let mut feats = Vec::with_capacity(4);
        for (i, conv) in self.stages.iter().enumerate() {
            h = leaky_relu(&conv.forward(&h)?)?;
            if i >= 1 {
                feats.push(h.clone());
            }
        }
        let logits = self.head.forward(&global_avg_pool(&h)?)?;
        let feats: [Tensor; 4] = feats.try_into().expect("four feature stages");
        Ok((RecognitionFeatures(feats), logits))
    }

    /// Detached features of `(B, 1, 256, 256)` images.
    pub fn features(&self, x: &Tensor) -> Result<RecognitionFeatures> {
        let (f, _) = self.run(&x.detach())?;
        Ok(RecognitionFeatures(f.0.map(|t| t.detach())))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x)?.1)
    }
}

/// Trains the classifier on `(image, class)` pairs; returns per-epoch loss and
/// training accuracy.
pub fn train_recognizer(
    examples: &[(GrayImage, u32)],
    config: RecognizerConfig,
    dtype: DType,
) -> Result<(RecognitionFeaturizer, Vec<(f64, f64)>)> {
    if examples.is_empty() {
        return Err(Error::invalid("recognizer needs training images"));
    }
    if let Some((_, c)) = examples.iter().find(|(_, c)| *c as usize >= config.num_classes) {
        return Err(Error::invalid(format!("class {c} outside num_classes {}", config.num_classes)));
    }
    let device = Device::Cpu;
    let net = RecognitionFeaturizer::new(config.clone(), dtype)?;
    let mut opt = Adam::new(net.store.vars(), config.lr, config.lr_halve_every)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        opt.start_epoch(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let imgs = chunk.iter().map(|&i| examples[i].0.to_tensor(&device)).collect::<Result<Vec<_>>>()?;
            let x = Tensor::cat(&imgs, 0)?.to_dtype(dtype)?;
            let labels: Vec<u32> = chunk.iter().map(|&i| examples[i].1).collect();
            let y = Tensor::new(labels.as_slice(), &device)?;
            let logits = net.logits(&x)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let pred = logits.argmax(1)?.to_vec1::<u32>()?;
            correct += pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
            opt.step(&loss)?;
        }
        let n = examples.len() as f64;
        log::info!("recognizer epoch {epoch}: loss {:.4} acc {:.3}", total / n, correct as f64 / n);
        history.push((total / n, correct as f64 / n));
    }
    let mut store = net.store;
    store.freeze();
    Ok((RecognitionFeaturizer::build(net.config, store)?, history))
}

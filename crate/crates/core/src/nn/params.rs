//! Named, seeded parameter storage and versioned checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "strokex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const WEIGHTS_FILE: &str = "model.safetensors";
const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    Kaiming { fan_in: usize },
    Zeros,
    Const(f64),
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
    frozen: bool,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
            frozen: false,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Subsequent `param` calls hand out detached tensors; gradients never
    /// flow into this store.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Fetches `name`, creating it with `init` if absent.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::shape(format!(
                    "parameter {name}: stored {:?}, requested {shape:?}",
                    v.dims()
                )));
            }
            return Ok(self.hand_out(v));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Kaiming { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        let out = self.hand_out(&v);
        self.vars.insert(name.to_string(), v);
        Ok(out)
    }

    fn hand_out(&self, v: &Var) -> Tensor {
        if self.frozen {
            v.as_detached_tensor()
        } else {
            v.as_tensor().clone()
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_detached_tensor()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Store pre-populated from a safetensors file, cast to `dtype`.
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let device = Device::Cpu;
        let map = candle_core::safetensors::load(path, &device)?;
        let mut vars = BTreeMap::new();
        for (k, t) in map {
            vars.insert(k, Var::from_tensor(&t.to_dtype(dtype)?)?);
        }
        Ok(Self {
            vars,
            rng: ChaCha8Rng::seed_from_u64(0),
            dtype,
            device,
            frozen: false,
        })
    }

    /// Exact copy of every parameter value.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_detached_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, v) in &self.vars {
            if let Some(t) = snapshot.get(k) {
                v.set(t)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta<C> {
    format: String,
    version: u32,
    kind: String,
    config: C,
    #[serde(default)]
    metrics: serde_json::Value,
}

/// A checkpoint directory holding `model.safetensors` and `meta.json`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub dir: PathBuf,
}

impl Checkpoint {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn exists(&self) -> bool {
        self.dir.join(WEIGHTS_FILE).is_file() && self.dir.join(META_FILE).is_file()
    }

    pub fn require(&self, stage: &'static str) -> Result<()> {
        if self.exists() {
            Ok(())
        } else {
            Err(Error::MissingCheckpoint {
                stage,
                path: self.dir.clone(),
            })
        }
    }

    pub fn save<C: Serialize>(
        &self,
        kind: &str,
        config: &C,
        metrics: serde_json::Value,
        store: &ParamStore,
    ) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        store.save(&self.dir.join(WEIGHTS_FILE))?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config,
            metrics,
        };
        let path = self.dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(path, e))
    }

    /// Reads the config and a parameter store, checking format and kind.
    pub fn load<C: DeserializeOwned>(&self, kind: &'static str, dtype: DType) -> Result<(C, ParamStore, serde_json::Value)> {
        self.require(kind)?;
        let path = self.dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta<C> = serde_json::from_str(&text)?;
        if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                meta.format,
                meta.version
            )));
        }
        if meta.kind != kind {
            return Err(Error::invalid(format!(
                "{}: holds a {} model, expected {kind}",
                path.display(),
                meta.kind
            )));
        }
        let store = ParamStore::load(&self.dir.join(WEIGHTS_FILE), dtype)?;
        Ok((meta.config, store, meta.metrics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new(3, DType::F32);
        let mut b = ParamStore::new(3, DType::F32);
        let ta = a.param("w", &[4, 5], Init::Kaiming { fan_in: 5 }).unwrap();
        let tb = b.param("w", &[4, 5], Init::Kaiming { fan_in: 5 }).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new(1, DType::F32);
        let w = s.param("layer.w", &[3, 2], Init::Kaiming { fan_in: 2 }).unwrap();
        let ck = Checkpoint::new(dir.path().join("ck"));
        ck.save("toy", &42u32, serde_json::json!({"loss": 1.5}), &s).unwrap();
        let (cfg, mut back, metrics): (u32, _, _) = ck.load("toy", DType::F32).unwrap();
        assert_eq!(cfg, 42);
        assert_eq!(metrics["loss"], 1.5);
        let w2 = back.param("layer.w", &[3, 2], Init::Zeros).unwrap();
        assert_eq!(w.to_vec2::<f32>().unwrap(), w2.to_vec2::<f32>().unwrap());
        assert!(ck.load::<u32>("other", DType::F32).is_err());
    }

    #[test]
    fn frozen_store_hands_out_untracked_tensors() {
        let mut s = ParamStore::new(1, DType::F32);
        s.param("w", &[2], Init::Zeros).unwrap();
        s.freeze();
        let t = s.param("w", &[2], Init::Zeros).unwrap();
        assert!(!t.track_op());
    }
}

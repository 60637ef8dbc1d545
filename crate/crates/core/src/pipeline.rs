//! Run configuration, run directories and the staged training and inference
//! driver behind the command line.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{read_dataset, Dataset, StrokeSample, StrokeStyle};
use crate::error::{Error, Result};
use crate::extractnet::{self, extract_all, train_extractnet, ExtractConfig, ExtractNetModel, Extraction, StageInputs};
use crate::metrics::{evaluate_extraction, evaluate_registration, EvaluationReport, SampleStrokes};
use crate::nn::Checkpoint;
use crate::overlay;
use crate::prior::{oracle_prior, PriorData, Reference};
use crate::recognition::{train_recognizer, RecognitionFeaturizer, RecognizerConfig};
use crate::sdnet::{self, reference_for, train_sdnet, SdnetConfig, SdnetModel};
use crate::segnet::{self, train_segnet, SegnetConfig, SegnetModel};
use crate::similarity::{self, train_contentnet, ContentConfig, ContentNet};

/// Environment variable naming the directory that holds all runs.
pub const RUNS_ENV: &str = "STROKEX_RUNS";
pub const DEFAULT_RUNS_ROOT: &str = "runs";
const CONFIG_FILE: &str = "config.json";
const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";
pub const REPORT_FILE: &str = "report.json";

/// Every trained stage, in training order.
pub const STAGES: [&str; 5] = [
    similarity::CHECKPOINT_KIND,
    crate::recognition::CHECKPOINT_KIND,
    sdnet::CHECKPOINT_KIND,
    segnet::CHECKPOINT_KIND,
    extractnet::CHECKPOINT_KIND,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub desk_scale: bool,
    pub seed: u64,
    pub deterministic: bool,
    /// Stroke masks sampled from the training split for the similarity
    /// autoencoder; 0 keeps all of them.
    pub content_max_strokes: usize,
    pub content: ContentConfig,
    pub recognizer: RecognizerConfig,
    pub sdnet: SdnetConfig,
    pub segnet: SegnetConfig,
    /// Train the segmentation stage on priors from the recorded generating
    /// affines instead of registration output.
    #[serde(default)]
    pub segnet_oracle_prior: bool,
    pub extractnet: ExtractConfig,
    /// Keys whose values differ from the full-scale defaults; filled in by
    /// `resolve`.
    #[serde(default)]
    pub overrides: Vec<String>,
}

impl RunConfig {
    /// Full-scale settings: batch 8, epochs 40/10/20 with learning rate 1e-4
    /// halved every 10/2/5 epochs, loss weights 0.5 and 5, fine-tuning field
    /// weight 0.5.
    pub fn full(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            desk_scale: false,
            seed: 0,
            deterministic: false,
            content_max_strokes: 0,
            content: ContentConfig::default(),
            recognizer: RecognizerConfig::default(),
            sdnet: SdnetConfig::default(),
            segnet: SegnetConfig::default(),
            segnet_oracle_prior: false,
            extractnet: ExtractConfig::default(),
            overrides: Vec::new(),
        }
    }

    /// Quarter-width networks and short schedules sized for one CPU core.
    pub fn desk(data_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::full(data_dir);
        c.desk_scale = true;
        c.content_max_strokes = 400;
        c.content.epochs = 2;
        c.recognizer.epochs = 6;
        c.recognizer.lr = 3e-3;
        c.sdnet.channel_scale = 0.25;
        c.sdnet.epochs = 8;
        c.sdnet.lr = 1e-3;
        c.sdnet.lr_halve_every = 4;
        c.segnet.channel_scale = 0.25;
        c.segnet.epochs = 4;
        c.segnet.lr = 1e-3;
        c.extractnet.channel_scale = 0.25;
        c.extractnet.epochs = 6;
        c.extractnet.lr = 1e-3;
        c.extractnet.lr_halve_every = 3;
        c.extractnet.crop = 64;
        c.extractnet.epoch_examples = Some(600);
        c
    }

    /// Propagates the run seed into every stage and fills the dependent
    /// fields and the override list.
    pub fn resolve(self) -> Self {
        let s = self.seed;
        let mut me = self.resolve_seeds(s);
        me.overrides.clear();
        let base = serde_json::to_value(Self::full(me.data_dir.clone()).resolve_seeds(s)).expect("plain data");
        let mine = serde_json::to_value(&me).expect("plain data");
        let mut keys = Vec::new();
        diff_keys("", &base, &mine, &mut keys);
        me.overrides = keys;
        me
    }

    fn resolve_seeds(mut self, s: u64) -> Self {
        self.seed = s;
        self.content.seed = s;
        self.recognizer.seed = s.wrapping_add(1);
        self.sdnet.seed = s.wrapping_add(2);
        self.segnet.seed = s.wrapping_add(3);
        self.extractnet.seed = s.wrapping_add(4);
        self.extractnet.feature_channels = self.segnet.feature_channels();
        self
    }

    /// Merges a JSON object into this config key by key.
    pub fn with_overrides(self, patch: &Value) -> Result<Self> {
        let mut v = serde_json::to_value(&self)?;
        merge(&mut v, patch);
        Ok(serde_json::from_value(v)?)
    }

    pub fn dtype(&self) -> DType {
        DType::F32
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn diff_keys(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, vb) in y {
                if k == "overrides" {
                    continue;
                }
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match x.get(k) {
                    Some(va) => diff_keys(&key, va, vb, out),
                    None => out.push(key),
                }
            }
        }
        (x, y) if x != y => out.push(prefix.to_string()),
        _ => {}
    }
}

/// Makes numeric kernels single-threaded so that reductions run in a fixed
/// order. Must be called before the first tensor operation.
pub fn enforce_determinism() {
    std::env::set_var("RAYON_NUM_THREADS", "1");
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUNS_ROOT), PathBuf::from)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Relative to the run directory.
    pub checkpoint: PathBuf,
    pub metrics: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub config: PathBuf,
    pub stages: BTreeMap<String, StageRecord>,
    pub reports: Vec<PathBuf>,
}

/// A run directory held exclusively through a lock file for the lifetime of
/// this value.
#[derive(Debug)]
pub struct RunDir {
    pub name: String,
    pub root: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    /// Opens `<runs_root>/<name>`, creating it if needed.
    pub fn open(runs_root: &Path, name: &str) -> Result<Self> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::invalid(format!("bad run name {name:?}")));
        }
        let root = runs_root.join(name);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::invalid(format!("run {name} is in use (remove {} if stale)", lock.display())));
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        Ok(Self {
            name: name.to_string(),
            root,
            lock,
        })
    }

    pub fn checkpoint(&self, stage: &str) -> Checkpoint {
        Checkpoint::new(self.root.join(stage))
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn has_config(&self) -> bool {
        self.path(CONFIG_FILE).is_file()
    }

    /// Writes the resolved config snapshot on first use. Later calls must
    /// pass the same config.
    pub fn init_config(&self, config: &RunConfig) -> Result<RunConfig> {
        let path = self.path(CONFIG_FILE);
        if path.is_file() {
            let existing = self.config()?;
            if existing != *config {
                return Err(Error::invalid(format!(
                    "run {} already has a different config snapshot at {}",
                    self.name,
                    path.display()
                )));
            }
            return Ok(existing);
        }
        write_json(&path, config)?;
        let mut m = self.manifest().unwrap_or_default();
        m.run_name = self.name.clone();
        m.config = PathBuf::from(CONFIG_FILE);
        self.write_manifest(&m)?;
        Ok(config.clone())
    }

    pub fn config(&self) -> Result<RunConfig> {
        let path = self.path(CONFIG_FILE);
        if !path.is_file() {
            return Err(Error::invalid(format!("run {} has no config snapshot; train a stage first", self.name)));
        }
        read_json(&path)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        read_json(&self.path(MANIFEST_FILE))
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        write_json(&self.path(MANIFEST_FILE), m)
    }

    fn record_stage(&self, stage: &str, metrics: Value) -> Result<()> {
        let mut m = self.manifest()?;
        m.stages.insert(
            stage.to_string(),
            StageRecord {
                checkpoint: PathBuf::from(stage),
                metrics,
            },
        );
        self.write_manifest(&m)
    }

    fn record_report(&self, rel: PathBuf) -> Result<()> {
        let mut m = self.manifest()?;
        if !m.reports.contains(&rel) {
            m.reports.push(rel);
        }
        self.write_manifest(&m)
    }

    /// Checks that every artifact the manifest names exists.
    pub fn verify_manifest(&self) -> Result<RunManifest> {
        let m = self.manifest()?;
        let mut missing: Vec<PathBuf> = Vec::new();
        if !self.path(&m.config).is_file() {
            missing.push(m.config.clone());
        }
        for (stage, rec) in &m.stages {
            if !Checkpoint::new(self.path(&rec.checkpoint)).exists() {
                missing.push(PathBuf::from(stage));
            }
        }
        missing.extend(m.reports.iter().filter(|r| !self.path(r).exists()).cloned());
        if missing.is_empty() {
            Ok(m)
        } else {
            Err(Error::invalid(format!("run {} manifest names missing artifacts: {missing:?}", self.name)))
        }
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A dataset opened for a run along with its rendered references.
pub struct RunData {
    pub dataset: Dataset,
    pub train: Vec<StrokeSample>,
    pub test: Vec<StrokeSample>,
    pub references: BTreeMap<u32, Reference>,
}

impl RunData {
    pub fn load(data_dir: &Path) -> Result<Self> {
        let dataset = read_dataset(data_dir)?;
        let (train, test) = dataset.load_split()?;
        if train.is_empty() {
            return Err(Error::invalid(format!("dataset {} has no training samples", data_dir.display())));
        }
        let style = train.first().map_or(StrokeStyle::Calligraphy, |s| s.style);
        let references = dataset
            .layouts
            .iter()
            .map(|l| Ok((l.layout_id, Reference::new(l, style)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            dataset,
            train,
            test,
            references,
        })
    }

    fn class_of(&self, layout_id: u32) -> u32 {
        self.dataset
            .layouts
            .iter()
            .position(|l| l.layout_id == layout_id)
            .expect("samples reference known layouts") as u32
    }
}

/// Loaded models of the three inference stages.
pub struct Models {
    pub sdnet: SdnetModel,
    pub segnet: SegnetModel,
    pub extractnet: ExtractNetModel,
}

fn load_recognizer(run: &RunDir, dtype: DType) -> Result<RecognitionFeaturizer> {
    let ckpt = run.checkpoint(crate::recognition::CHECKPOINT_KIND);
    ckpt.require("recognizer")?;
    RecognitionFeaturizer::load(&ckpt, dtype)
}

pub fn load_sdnet(run: &RunDir, dtype: DType) -> Result<SdnetModel> {
    let ckpt = run.checkpoint(sdnet::CHECKPOINT_KIND);
    ckpt.require("sdnet")?;
    SdnetModel::load(&ckpt, load_recognizer(run, dtype)?, dtype)
}

pub fn load_models(run: &RunDir, dtype: DType) -> Result<Models> {
    for stage in [sdnet::CHECKPOINT_KIND, segnet::CHECKPOINT_KIND, extractnet::CHECKPOINT_KIND] {
        run.checkpoint(stage).require(stage_label(stage))?;
    }
    Ok(Models {
        sdnet: load_sdnet(run, dtype)?,
        segnet: SegnetModel::load(&run.checkpoint(segnet::CHECKPOINT_KIND), dtype)?,
        extractnet: ExtractNetModel::load(&run.checkpoint(extractnet::CHECKPOINT_KIND), dtype)?,
    })
}

fn stage_label(stage: &str) -> &'static str {
    STAGES.into_iter().find(|s| *s == stage).unwrap_or("unknown")
}

/// Trains the similarity autoencoder on training-split stroke masks and the
/// recognizer on training targets labelled by layout.
pub fn train_content_stage(run: &RunDir, cfg: &RunConfig, data: &RunData) -> Result<Value> {
    let all: Vec<_> = data.train.iter().flat_map(|s| s.stroke_masks.iter().cloned()).collect();
    let step = if cfg.content_max_strokes == 0 {
        1
    } else {
        all.len().div_ceil(cfg.content_max_strokes).max(1)
    };
    let strokes: Vec<_> = all.into_iter().step_by(step).collect();
    let (content, history) = train_contentnet(&strokes, cfg.content.clone(), cfg.dtype())?;
    let content_metrics = json!({ "strokes": strokes.len(), "holdout_bce": history.holdout_bce, "train_bce": history.train_bce });
    content.save(&run.checkpoint(similarity::CHECKPOINT_KIND), content_metrics.clone())?;
    run.record_stage(similarity::CHECKPOINT_KIND, content_metrics.clone())?;

    let examples: Vec<_> = data
        .train
        .iter()
        .map(|s| (s.target_image.clone(), data.class_of(s.layout_id)))
        .collect();
    let rec_cfg = RecognizerConfig {
        num_classes: data.dataset.layouts.len(),
        ..cfg.recognizer.clone()
    };
    let (rec, history) = train_recognizer(&examples, rec_cfg, cfg.dtype())?;
    let rec_metrics = json!({ "loss_accuracy": history });
    rec.save(&run.checkpoint(crate::recognition::CHECKPOINT_KIND), rec_metrics.clone())?;
    run.record_stage(crate::recognition::CHECKPOINT_KIND, rec_metrics.clone())?;
    Ok(json!({ "contentnet": content_metrics, "recognizer": rec_metrics }))
}

pub fn train_sdnet_stage(run: &RunDir, cfg: &RunConfig, data: &RunData) -> Result<Value> {
    let content_ckpt = run.checkpoint(similarity::CHECKPOINT_KIND);
    content_ckpt.require("contentnet")?;
    let recognizer = load_recognizer(run, cfg.dtype())?;
    let content = ContentNet::load(&content_ckpt, cfg.dtype())?;
    let ckpt = run.checkpoint(sdnet::CHECKPOINT_KIND);
    fs::create_dir_all(&ckpt.dir).map_err(|e| Error::io(&ckpt.dir, e))?;
    let log_path = ckpt.dir.join("log.jsonl");
    let tr = train_sdnet(&data.train, &data.references, &content, recognizer, cfg.sdnet.clone(), Some(&log_path))?;
    let metrics = json!({
        "best_epoch": tr.best_epoch,
        "val_mDis": tr.best.0,
        "val_mBIou": tr.best.1,
        "final_L_sum": tr.log.last().map(|l| l.l_sum),
    });
    tr.model.save(&ckpt, metrics.clone())?;
    run.record_stage(sdnet::CHECKPOINT_KIND, metrics.clone())?;
    Ok(metrics)
}

/// Registration priors for `samples`, from the trained registration stage or
/// from recorded affines.
pub fn priors_for(samples: &[StrokeSample], refs: &BTreeMap<u32, Reference>, sdnet: Option<&SdnetModel>) -> Result<Vec<PriorData>> {
    samples
        .iter()
        .map(|s| {
            let r = reference_for(refs, s)?;
            match sdnet {
                Some(m) => m.make_prior(&s.target_image, r),
                None => oracle_prior(r, s),
            }
        })
        .collect()
}

pub fn train_segnet_stage(run: &RunDir, cfg: &RunConfig, data: &RunData) -> Result<Value> {
    let sd = if cfg.segnet_oracle_prior {
        None
    } else {
        Some(load_sdnet(run, cfg.dtype())?)
    };
    let priors = priors_for(&data.train, &data.references, sd.as_ref())?;
    let ckpt = run.checkpoint(segnet::CHECKPOINT_KIND);
    fs::create_dir_all(&ckpt.dir).map_err(|e| Error::io(&ckpt.dir, e))?;
    let tr = train_segnet(&data.train, &priors, cfg.segnet.clone(), cfg.dtype(), Some(&ckpt.dir.join("log.jsonl")))?;
    let best = &tr.log[tr.best_epoch.min(tr.log.len().saturating_sub(1))];
    let metrics = json!({ "best_epoch": tr.best_epoch, "val_mIOU": best.val.mean, "val_per_category": best.val.per_category });
    tr.model.save(&ckpt, metrics.clone())?;
    run.record_stage(segnet::CHECKPOINT_KIND, metrics.clone())?;
    Ok(metrics)
}

pub fn stage_inputs(samples: &[StrokeSample], refs: &BTreeMap<u32, Reference>, sd: &SdnetModel, seg: &SegnetModel) -> Result<Vec<StageInputs>> {
    samples
        .iter()
        .map(|s| StageInputs::compute(s, reference_for(refs, s)?, sd, seg))
        .collect()
}

pub fn train_extractnet_stage(run: &RunDir, cfg: &RunConfig, data: &RunData) -> Result<Value> {
    let sd = load_sdnet(run, cfg.dtype())?;
    let seg_ckpt = run.checkpoint(segnet::CHECKPOINT_KIND);
    seg_ckpt.require("segnet")?;
    let seg = SegnetModel::load(&seg_ckpt, cfg.dtype())?;
    let inputs = stage_inputs(&data.train, &data.references, &sd, &seg)?;
    let ckpt = run.checkpoint(extractnet::CHECKPOINT_KIND);
    fs::create_dir_all(&ckpt.dir).map_err(|e| Error::io(&ckpt.dir, e))?;
    let tr = train_extractnet(&data.train, &inputs, cfg.extractnet.clone(), cfg.dtype(), Some(&ckpt.dir.join("log.jsonl")))?;
    let best = &tr.log[tr.best_epoch.min(tr.log.len().saturating_sub(1))];
    let metrics = json!({ "best_epoch": tr.best_epoch, "val_stroke_iou": best.val_stroke_iou, "examples": tr.examples });
    tr.model.save(&ckpt, metrics.clone())?;
    run.record_stage(extractnet::CHECKPOINT_KIND, metrics.clone())?;
    Ok(metrics)
}

/// Runs the three inference stages on every sample.
pub fn extract_samples(models: &Models, samples: &[StrokeSample], refs: &BTreeMap<u32, Reference>) -> Result<Vec<Extraction>> {
    samples
        .iter()
        .map(|s| {
            let r = reference_for(refs, s)?;
            extract_all(&s.target_image, r, &models.sdnet, &models.segnet, &models.extractnet)
                .map_err(|e| Error::sample(&s.sample_id, e.to_string()))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractedStroke {
    pub order: usize,
    pub category: u8,
    pub path: PathBuf,
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractedSample {
    pub sample_id: String,
    pub strokes: Vec<ExtractedStroke>,
}

/// Writes per-stroke masks under `extract/<sample_id>/` plus
/// `extract/index.json`.
pub fn extract_stage(run: &RunDir, cfg: &RunConfig, data: &RunData) -> Result<Vec<ExtractedSample>> {
    let models = load_models(run, cfg.dtype())?;
    let results = extract_samples(&models, &data.test, &data.references)?;
    let root = run.path("extract");
    let mut index = Vec::with_capacity(results.len());
    for (s, ex) in data.test.iter().zip(&results) {
        let dir = root.join(&s.sample_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let strokes = ex
            .strokes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let rel = PathBuf::from(&s.sample_id).join(format!("{i}.png"));
                m.save_png(&root.join(&rel))?;
                Ok(ExtractedStroke {
                    order: i,
                    category: ex.prior.strokes[i].category,
                    path: rel,
                    iou: s.stroke_masks.get(i).map(|t| m.iou(t)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        index.push(ExtractedSample {
            sample_id: s.sample_id.clone(),
            strokes,
        });
    }
    write_json(&root.join("index.json"), &index)?;
    run.record_report(PathBuf::from("extract/index.json"))?;
    Ok(index)
}

fn sample_strokes(samples: &[StrokeSample], masks: impl Fn(usize) -> Vec<crate::raster::Mask>) -> Vec<SampleStrokes> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| SampleStrokes {
            sample_id: s.sample_id.clone(),
            masks: masks(i),
        })
        .collect()
}

/// Prior metrics and extraction metrics of a set of results.
pub fn evaluation_report(dataset: &str, run_name: &str, samples: &[StrokeSample], results: &[Extraction]) -> Result<EvaluationReport> {
    let truth = sample_strokes(samples, |i| samples[i].stroke_masks.clone());
    let priors = sample_strokes(samples, |i| results[i].prior.masks());
    let extracted = sample_strokes(samples, |i| results[i].strokes.clone());
    let reg = evaluate_registration(&priors, &truth)?;
    let ext = evaluate_extraction(&extracted, &truth)?;
    EvaluationReport::new(dataset.to_string(), run_name.to_string(), &reg, &ext)
}

/// Scores the test split end to end and writes `report.json`.
pub fn evaluate_stage(run: &RunDir, cfg: &RunConfig, data: &RunData) -> Result<EvaluationReport> {
    let models = load_models(run, cfg.dtype())?;
    if data.test.is_empty() {
        return Err(Error::invalid("dataset has no test samples to evaluate"));
    }
    let results = extract_samples(&models, &data.test, &data.references)?;
    let report = evaluation_report(&cfg.data_dir.display().to_string(), &run.name, &data.test, &results)?;
    write_json(&run.path(REPORT_FILE), &report)?;
    run.record_report(PathBuf::from(REPORT_FILE))?;
    Ok(report)
}

/// Overlay and panel images for up to `limit` test samples.
pub fn report_stage(run: &RunDir, cfg: &RunConfig, data: &RunData, limit: usize) -> Result<Vec<PathBuf>> {
    let models = load_models(run, cfg.dtype())?;
    let samples = &data.test[..data.test.len().min(limit)];
    let results = extract_samples(&models, samples, &data.references)?;
    let dir = run.path("overlays");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    for (s, ex) in samples.iter().zip(&results) {
        let over = dir.join(format!("{}.png", s.sample_id));
        overlay::save_rgb(&overlay::render_overlay(&s.target_image, &ex.strokes), &over)?;
        let panel = dir.join(format!("{}_panel.png", s.sample_id));
        overlay::save_rgb(&overlay::render_panel(&s.target_image, &ex.prior, &ex.segmentation, &ex.strokes)?, &panel)?;
        written.push(over);
        written.push(panel);
    }
    run.record_report(PathBuf::from("overlays"))?;
    Ok(written)
}

/// Every training stage followed by evaluation, in one process.
pub fn run_pipeline(run: &RunDir, cfg: &RunConfig) -> Result<EvaluationReport> {
    let cfg = run.init_config(cfg)?;
    let data = RunData::load(&cfg.data_dir)?;
    train_content_stage(run, &cfg, &data)?;
    train_sdnet_stage(run, &cfg, &data)?;
    train_segnet_stage(run, &cfg, &data)?;
    train_extractnet_stage(run, &cfg, &data)?;
    evaluate_stage(run, &cfg, &data)
}

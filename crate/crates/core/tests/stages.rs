use std::collections::BTreeMap;

use candle_core::DType;

use strokex::data::{generate_corpus, CorpusConfig, StrokeSample};
use strokex::extractnet::{ExtractConfig, ExtractNetModel};
use strokex::nn::Checkpoint;
use strokex::prior::{identity_prior, Reference};
use strokex::recognition::{RecognitionFeaturizer, RecognizerConfig};
use strokex::sdnet::{train_sdnet, validate, SdnetConfig, SdnetModel};
use strokex::segnet::{SegnetConfig, SegnetModel};
use strokex::similarity::{ContentConfig, ContentNet};

fn corpus(n: usize) -> (Vec<StrokeSample>, BTreeMap<u32, Reference>) {
    let cfg = CorpusConfig {
        n_samples: n,
        n_layouts: 2,
        seed: 5,
        ..CorpusConfig::default()
    };
    let (layouts, samples) = generate_corpus(&cfg).unwrap();
    let refs = layouts
        .iter()
        .map(|l| (l.layout_id, Reference::new(l, cfg.style).unwrap()))
        .collect();
    (samples, refs)
}

fn recognizer() -> RecognitionFeaturizer {
    RecognitionFeaturizer::new(RecognizerConfig { num_classes: 2, ..RecognizerConfig::default() }, DType::F32).unwrap()
}

fn desk_sdnet(single_field: bool) -> SdnetConfig {
    SdnetConfig {
        channel_scale: 0.25,
        epochs: 1,
        single_field,
        ..SdnetConfig::default()
    }
}

#[test]
fn untrained_registration_returns_the_reference() {
    let (samples, refs) = corpus(2);
    for single in [false, true] {
        let model = SdnetModel::new(desk_sdnet(single), recognizer(), DType::F32).unwrap();
        let s = &samples[0];
        let r = &refs[&s.layout_id];
        let prior = model.make_prior(&s.target_image, r).unwrap();
        assert_eq!(prior.masks(), identity_prior(r).masks(), "single_field {single}");
        assert_eq!(prior.fallback_count(), 0);
    }
}

#[test]
fn reloaded_registration_reproduces_validation() {
    let (samples, refs) = corpus(6);
    let content = ContentNet::new(ContentConfig::default(), DType::F32).unwrap();
    let tr = train_sdnet(&samples, &refs, &content, recognizer(), desk_sdnet(false), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint::new(dir.path().join("sdnet"));
    tr.model.save(&ckpt, serde_json::json!({})).unwrap();
    let loaded = SdnetModel::load(&ckpt, recognizer(), DType::F32).unwrap();
    let all: Vec<&StrokeSample> = samples.iter().collect();
    let (d0, b0) = validate(&tr.model, &all, &refs).unwrap();
    let (d1, b1) = validate(&loaded, &all, &refs).unwrap();
    assert!((d0 - d1).abs() < 1e-4 && (b0 - b1).abs() < 1e-4, "({d0}, {b0}) vs ({d1}, {b1})");
    assert_eq!(loaded.config(), tr.model.config());
}

#[test]
fn reloaded_segmentation_and_extraction_match() {
    let (samples, refs) = corpus(1);
    let s = &samples[0];
    let prior = identity_prior(&refs[&s.layout_id]);
    let dir = tempfile::tempdir().unwrap();

    let seg = SegnetModel::new(SegnetConfig { channel_scale: 0.25, ..SegnetConfig::default() }, DType::F32).unwrap();
    let seg_ckpt = Checkpoint::new(dir.path().join("segnet"));
    seg.save(&seg_ckpt, serde_json::json!({})).unwrap();
    let seg2 = SegnetModel::load(&seg_ckpt, DType::F32).unwrap();
    let a = seg.forward(&s.target_image, &prior.composite()).unwrap();
    let b = seg2.forward(&s.target_image, &prior.composite()).unwrap();
    assert_eq!(a.masks, b.masks);

    let ext_cfg = ExtractConfig {
        channel_scale: 0.25,
        feature_channels: seg.config().feature_channels(),
        ..ExtractConfig::default()
    };
    let ext = ExtractNetModel::new(ext_cfg, DType::F32).unwrap();
    let ext_ckpt = Checkpoint::new(dir.path().join("extractnet"));
    ext.save(&ext_ckpt, serde_json::json!({})).unwrap();
    let ext2 = ExtractNetModel::load(&ext_ckpt, DType::F32).unwrap();
    let m1 = ext.extract_strokes(&s.target_image, &prior, &a).unwrap();
    let m2 = ext2.extract_strokes(&s.target_image, &prior, &a).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.len(), prior.len());
}

#[test]
fn checkpoints_refuse_the_wrong_kind() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint::new(dir.path().join("x"));
    let seg = SegnetModel::new(SegnetConfig { channel_scale: 0.25, ..SegnetConfig::default() }, DType::F32).unwrap();
    seg.save(&ckpt, serde_json::json!({})).unwrap();
    assert!(ExtractNetModel::load(&ckpt, DType::F32).is_err());
}

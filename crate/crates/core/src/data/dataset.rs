//! On-disk dataset: `manifest.json`, `layouts.json`, `truth.json`,
//! `targets/<id>.png` and `strokes/<id>/<k>.png`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::AffineStrokeTransform;
use crate::raster::{GrayImage, Mask, CANVAS};

use super::{ReferenceLayout, StrokeSample, StrokeStyle};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LAYOUTS_FILE: &str = "layouts.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const DEFAULT_SPLIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub target_path: PathBuf,
    pub stroke_paths: Vec<PathBuf>,
    pub layout_id: u32,
    pub categories: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Fraction of entries held out for testing.
    pub split: f64,
}

/// Generation-time facts that are not recoverable from the images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub style: StrokeStyle,
    pub true_affines: Option<Vec<AffineStrokeTransform>>,
}

fn split_key(sample_id: &str) -> [u8; 32] {
    Sha256::digest(sample_id.as_bytes()).into()
}

impl DatasetManifest {
    /// Deterministic train/test partition: entries sorted by the SHA-256 of
    /// their id, the first `round(n * split)` go to test. Both halves keep
    /// manifest order.
    pub fn partition(&self) -> (Vec<&ManifestEntry>, Vec<&ManifestEntry>) {
        let n = self.entries.len();
        let n_test = ((n as f64) * self.split.clamp(0.0, 1.0)).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| split_key(&self.entries[i].sample_id));
        let mut is_test = vec![false; n];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        let (test, train): (Vec<_>, Vec<_>) = self
            .entries
            .iter()
            .zip(&is_test)
            .partition(|(_, &t)| t);
        (
            train.into_iter().map(|(e, _)| e).collect(),
            test.into_iter().map(|(e, _)| e).collect(),
        )
    }
}

/// A dataset root opened and validated.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub layouts: Vec<ReferenceLayout>,
    pub truth: BTreeMap<String, SampleTruth>,
}

impl Dataset {
    pub fn layout(&self, layout_id: u32) -> Result<&ReferenceLayout> {
        self.layouts
            .iter()
            .find(|l| l.layout_id == layout_id)
            .ok_or_else(|| Error::invalid(format!("no layout {layout_id}")))
    }

    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<StrokeSample> {
        let target_image = GrayImage::load_png(&self.root.join(&entry.target_path))?;
        let stroke_masks = entry
            .stroke_paths
            .iter()
            .map(|p| Mask::load_png(&self.root.join(p)))
            .collect::<Result<Vec<_>>>()?;
        let truth = self.truth.get(&entry.sample_id);
        Ok(StrokeSample {
            sample_id: entry.sample_id.clone(),
            target_image,
            stroke_masks,
            layout_id: entry.layout_id,
            categories: entry.categories.clone(),
            style: truth.map_or(StrokeStyle::Calligraphy, |t| t.style),
            true_affines: truth.and_then(|t| t.true_affines.clone()),
        })
    }

    /// Train and test samples, decoded.
    pub fn load_split(&self) -> Result<(Vec<StrokeSample>, Vec<StrokeSample>)> {
        let (train, test) = self.manifest.partition();
        let load = |es: Vec<&ManifestEntry>| es.into_iter().map(|e| self.load_sample(e)).collect::<Result<Vec<_>>>();
        Ok((load(train)?, load(test)?))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(
    samples: &[StrokeSample],
    layouts: &[ReferenceLayout],
    root: &Path,
    split: f64,
) -> Result<DatasetManifest> {
    create_dir(&root.join("targets"))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut truth = BTreeMap::new();
    for s in samples {
        let layout = layouts
            .iter()
            .find(|l| l.layout_id == s.layout_id)
            .ok_or_else(|| Error::sample(&s.sample_id, format!("unknown layout {}", s.layout_id)))?;
        s.validate(layout)?;
        let target_path = PathBuf::from("targets").join(format!("{}.png", s.sample_id));
        s.target_image.save_png(&root.join(&target_path))?;
        let stroke_dir = PathBuf::from("strokes").join(&s.sample_id);
        create_dir(&root.join(&stroke_dir))?;
        let stroke_paths = s
            .stroke_masks
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let p = stroke_dir.join(format!("{k}.png"));
                m.save_png(&root.join(&p)).map(|_| p)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(ManifestEntry {
            sample_id: s.sample_id.clone(),
            target_path,
            stroke_paths,
            layout_id: s.layout_id,
            categories: s.categories.clone(),
        });
        truth.insert(
            s.sample_id.clone(),
            SampleTruth {
                style: s.style,
                true_affines: s.true_affines.clone(),
            },
        );
    }
    let manifest = DatasetManifest {
        root_dir: root.to_path_buf(),
        entries,
        split,
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    write_json(&root.join(LAYOUTS_FILE), &layouts)?;
    write_json(&root.join(TRUTH_FILE), &truth)?;
    Ok(manifest)
}

fn check_png(root: &Path, rel: &Path, sample_id: &str) -> Result<()> {
    let path = root.join(rel);
    if !path.is_file() {
        return Err(Error::sample(sample_id, format!("missing file {}", rel.display())));
    }
    let img = GrayImage::load_png(&path).map_err(|e| Error::sample(sample_id, e.to_string()))?;
    if (img.width(), img.height()) != (CANVAS, CANVAS) {
        return Err(Error::sample(
            sample_id,
            format!(
                "{} is {}x{}, expected {CANVAS}x{CANVAS}",
                rel.display(),
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(())
}

/// Opens a dataset root and validates every manifest entry against its
/// files and its layout.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let mut manifest: DatasetManifest = read_json(&root.join(MANIFEST_FILE))?;
    manifest.root_dir = root.to_path_buf();
    let layouts: Vec<ReferenceLayout> = read_json(&root.join(LAYOUTS_FILE))?;
    let truth_path = root.join(TRUTH_FILE);
    let truth = if truth_path.is_file() {
        read_json(&truth_path)?
    } else {
        BTreeMap::new()
    };
    for e in &manifest.entries {
        let layout = layouts
            .iter()
            .find(|l| l.layout_id == e.layout_id)
            .ok_or_else(|| Error::sample(&e.sample_id, format!("unknown layout {}", e.layout_id)))?;
        if e.stroke_paths.len() != layout.strokes.len() {
            return Err(Error::sample(
                &e.sample_id,
                format!(
                    "{} stroke files but layout {} has {} strokes",
                    e.stroke_paths.len(),
                    layout.layout_id,
                    layout.strokes.len()
                ),
            ));
        }
        if e.categories != layout.categories() {
            return Err(Error::sample(&e.sample_id, "categories disagree with the layout"));
        }
        check_png(root, &e.target_path, &e.sample_id)?;
        for p in &e.stroke_paths {
            check_png(root, p, &e.sample_id)?;
        }
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
        layouts,
        truth,
    })
}

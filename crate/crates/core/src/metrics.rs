//! Prior and extraction quality metrics over ordered stroke sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

/// Distance charged for a stroke whose extracted mask is empty: the diagonal
/// of the 256 x 256 canvas.
pub const EMPTY_DISTANCE: f64 = 362.0;

pub fn centroid(mask: &Mask) -> Result<(f64, f64)> {
    mask.centroid().ok_or_else(|| Error::invalid("centroid of an empty mask"))
}

fn check_lengths(extracted: &[Mask], truth: &[Mask]) -> Result<()> {
    if extracted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "stroke sets differ in length: {} extracted vs {} truth",
            extracted.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else {
        v.sum::<f64>() / n as f64
    }
}

fn pair_distance(a: &Mask, b: &Mask) -> f64 {
    match (a.centroid(), b.centroid()) {
        (Some(p), Some(q)) => (p.0 - q.0).hypot(p.1 - q.1),
        _ => EMPTY_DISTANCE,
    }
}

fn pair_box_iou(a: &Mask, b: &Mask) -> f64 {
    match (a.bounding_box(), b.bounding_box()) {
        (Some(p), Some(q)) => p.iou(&q),
        _ => 0.0,
    }
}

/// Truth index with the largest intersection with `query`; ties and
/// all-zero overlaps go to the lowest index.
pub fn max_cross(query: &Mask, truth: &[Mask]) -> usize {
    let mut best = (0, 0);
    for (j, t) in truth.iter().enumerate() {
        let inter = query.intersection_count(t);
        if inter > best.1 {
            best = (j, inter);
        }
    }
    best.0
}

/// Mean centroid distance under positional pairing.
pub fn m_dis(extracted: &[Mask], truth: &[Mask]) -> Result<f64> {
    check_lengths(extracted, truth)?;
    Ok(mean(extracted.iter().zip(truth).map(|(a, b)| pair_distance(a, b))))
}

/// Mean IOU of tight bounding boxes under positional pairing.
pub fn m_biou(extracted: &[Mask], truth: &[Mask]) -> Result<f64> {
    check_lengths(extracted, truth)?;
    Ok(mean(extracted.iter().zip(truth).map(|(a, b)| pair_box_iou(a, b))))
}

/// Mean mask IOU with stroke `i` scored against truth stroke `i`.
pub fn m_iou_m(extracted: &[Mask], truth: &[Mask]) -> Result<f64> {
    check_lengths(extracted, truth)?;
    Ok(mean(extracted.iter().zip(truth).map(|(a, b)| a.iou(b))))
}

/// Mean mask IOU with each extracted stroke scored against the truth stroke
/// it overlaps most.
pub fn m_iou_um(extracted: &[Mask], truth: &[Mask]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("maxCross matching needs at least one truth stroke"));
    }
    Ok(mean(extracted.iter().map(|a| a.iou(&truth[max_cross(a, truth)]))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeRow {
    pub index: usize,
    pub distance: f64,
    pub box_iou: f64,
    pub mask_iou: f64,
    pub matched_index: usize,
    pub matched_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeMetricsReport {
    #[serde(rename = "mDis")]
    pub m_dis: f64,
    #[serde(rename = "mBIou")]
    pub m_biou: f64,
    #[serde(rename = "mIOU_m")]
    pub m_iou_m: f64,
    #[serde(rename = "mIOU_um")]
    pub m_iou_um: f64,
    pub strokes: Vec<StrokeRow>,
}

/// All four metrics for one character, with the per-stroke rows they average.
pub fn stroke_metrics(extracted: &[Mask], truth: &[Mask]) -> Result<StrokeMetricsReport> {
    check_lengths(extracted, truth)?;
    if truth.is_empty() {
        return Err(Error::invalid("no strokes to evaluate"));
    }
    let strokes: Vec<StrokeRow> = extracted
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(index, (a, b))| {
            let matched_index = max_cross(a, truth);
            StrokeRow {
                index,
                distance: pair_distance(a, b),
                box_iou: pair_box_iou(a, b),
                mask_iou: a.iou(b),
                matched_index,
                matched_iou: a.iou(&truth[matched_index]),
            }
        })
        .collect();
    Ok(StrokeMetricsReport {
        m_dis: mean(strokes.iter().map(|r| r.distance)),
        m_biou: mean(strokes.iter().map(|r| r.box_iou)),
        m_iou_m: mean(strokes.iter().map(|r| r.mask_iou)),
        m_iou_um: mean(strokes.iter().map(|r| r.matched_iou)),
        strokes,
    })
}

/// Ordered stroke masks of one sample.
#[derive(Clone, Debug)]
pub struct SampleStrokes {
    pub sample_id: String,
    pub masks: Vec<Mask>,
}

fn per_sample(predicted: &[SampleStrokes], truth: &[SampleStrokes]) -> Result<Vec<(String, StrokeMetricsReport)>> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predicted samples vs {} truth samples",
            predicted.len(),
            truth.len()
        )));
    }
    predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            if p.sample_id != t.sample_id {
                return Err(Error::sample(
                    &p.sample_id,
                    format!("paired with truth sample {}", t.sample_id),
                ));
            }
            let m = stroke_metrics(&p.masks, &t.masks).map_err(|e| Error::sample(&p.sample_id, e.to_string()))?;
            Ok((p.sample_id.clone(), m))
        })
        .collect()
}

/// Dataset means of per-sample metrics.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub samples: Vec<(String, StrokeMetricsReport)>,
}

impl Evaluation {
    pub fn m_dis(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.1.m_dis))
    }

    pub fn m_biou(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.1.m_biou))
    }

    pub fn m_iou_m(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.1.m_iou_m))
    }

    pub fn m_iou_um(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.1.m_iou_um))
    }
}

/// Prior quality: transformed reference strokes against the truth.
pub fn evaluate_registration(priors: &[SampleStrokes], truth: &[SampleStrokes]) -> Result<Evaluation> {
    Ok(Evaluation {
        samples: per_sample(priors, truth)?,
    })
}

/// Extraction quality: extracted strokes against the truth.
pub fn evaluate_extraction(extractions: &[SampleStrokes], truth: &[SampleStrokes]) -> Result<Evaluation> {
    Ok(Evaluation {
        samples: per_sample(extractions, truth)?,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: String,
    pub prior: StrokeMetricsReport,
    pub extraction: StrokeMetricsReport,
}

/// The `report.json` document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub model_run: String,
    #[serde(rename = "mDis")]
    pub m_dis: f64,
    #[serde(rename = "mBIou")]
    pub m_biou: f64,
    #[serde(rename = "mIOU_m")]
    pub m_iou_m: f64,
    #[serde(rename = "mIOU_um")]
    pub m_iou_um: f64,
    pub per_sample: Vec<SampleReport>,
}

impl EvaluationReport {
    /// Combines prior metrics (distance, box IOU) and extraction metrics
    /// (mask IOUs) evaluated over the same samples.
    pub fn new(dataset: String, model_run: String, registration: &Evaluation, extraction: &Evaluation) -> Result<Self> {
        if registration.samples.len() != extraction.samples.len() {
            return Err(Error::invalid("registration and extraction cover different samples"));
        }
        let per_sample = registration
            .samples
            .iter()
            .zip(&extraction.samples)
            .map(|((id, prior), (id2, ext))| {
                if id != id2 {
                    return Err(Error::sample(id, format!("extraction row is for {id2}")));
                }
                Ok(SampleReport {
                    sample_id: id.clone(),
                    prior: prior.clone(),
                    extraction: ext.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            model_run,
            m_dis: registration.m_dis(),
            m_biou: registration.m_biou(),
            m_iou_m: extraction.m_iou_m(),
            m_iou_um: extraction.m_iou_um(),
            per_sample,
        })
    }
}

//! Reference characters and the transformed-stroke prior derived from them.

use crate::data::{render_layout_strokes, ReferenceLayout, StrokeSample, StrokeStyle, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::field::{render_affine_image, AffineStrokeTransform};
use crate::raster::{GrayImage, Mask};

/// A rendered reference character with everything the stages read from it.
#[derive(Clone, Debug)]
pub struct Reference {
    pub layout: ReferenceLayout,
    pub style: StrokeStyle,
    /// Composite coverage image.
    pub image: GrayImage,
    /// Stroke `k` of `n` painted with value `(k + 1) / n`.
    pub labeled: GrayImage,
    /// Per-stroke coverage images.
    pub strokes: Vec<GrayImage>,
    pub masks: Vec<Mask>,
    pub categories: Vec<u8>,
}

impl Reference {
    pub fn new(layout: &ReferenceLayout, style: StrokeStyle) -> Result<Self> {
        let strokes = render_layout_strokes(layout, style)?;
        let mut image = GrayImage::canvas();
        for s in &strokes {
            image.max_with(s);
        }
        let masks: Vec<Mask> = strokes.iter().map(|s| s.binarize(0.5)).collect();
        Ok(Self {
            layout: layout.clone(),
            style,
            image,
            labeled: labeled_image(&masks),
            strokes,
            masks,
            categories: layout.categories(),
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Each mask painted with its evenly spaced label value; overlaps keep the
/// larger label.
pub fn labeled_image(masks: &[Mask]) -> GrayImage {
    let n = masks.len();
    let (w, h) = masks.first().map_or((0, 0), |m| (m.width(), m.height()));
    let mut out = GrayImage::new(w, h);
    for (k, m) in masks.iter().enumerate() {
        let v = (k + 1) as f32 / n as f32;
        for (dst, &on) in out.data_mut().iter_mut().zip(m.data()) {
            if on && v > *dst {
                *dst = v;
            }
        }
    }
    out
}

/// Marker value of a stroke category in the composite prior.
pub fn category_value(category: u8) -> f32 {
    (category as f32 + 1.0) / NUM_CATEGORIES as f32
}

/// Composite prior: each stroke's pixels carry its category marker, overlaps
/// keep the larger marker.
pub fn category_composite(masks: &[Mask], categories: &[u8]) -> GrayImage {
    let (w, h) = masks.first().map_or((0, 0), |m| (m.width(), m.height()));
    let mut out = GrayImage::new(w, h);
    for (m, &c) in masks.iter().zip(categories) {
        let v = category_value(c);
        for (dst, &on) in out.data_mut().iter_mut().zip(m.data()) {
            if on && v > *dst {
                *dst = v;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct StrokePrior {
    /// Reference stroke moved into target space.
    pub mask: Mask,
    /// Reference-to-target map; `fallback` marks a singular estimate.
    pub transform: AffineStrokeTransform,
    pub category: u8,
}

/// Transformed reference strokes in reference order.
#[derive(Clone, Debug)]
pub struct PriorData {
    pub strokes: Vec<StrokePrior>,
}

impl PriorData {
    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.strokes.iter().map(|s| s.mask.clone()).collect()
    }

    pub fn categories(&self) -> Vec<u8> {
        self.strokes.iter().map(|s| s.category).collect()
    }

    pub fn composite(&self) -> GrayImage {
        category_composite(&self.masks(), &self.categories())
    }

    pub fn fallback_count(&self) -> usize {
        self.strokes.iter().filter(|s| s.transform.fallback).count()
    }
}

/// Renders every reference stroke through its reference-to-target transform.
pub fn prior_from_transforms(reference: &Reference, transforms: &[AffineStrokeTransform]) -> Result<PriorData> {
    if transforms.len() != reference.len() {
        return Err(Error::invalid(format!(
            "{} transforms for {} reference strokes",
            transforms.len(),
            reference.len()
        )));
    }
    let strokes = reference
        .strokes
        .iter()
        .zip(transforms)
        .zip(&reference.categories)
        .map(|((img, t), &category)| {
            let (moved, fallback) = render_affine_image(img, t);
            let mut transform = *t;
            transform.fallback |= fallback;
            StrokePrior {
                mask: moved.binarize(0.5),
                transform,
                category,
            }
        })
        .collect();
    Ok(PriorData { strokes })
}

/// Prior built from the recorded generating affines of a synthetic sample.
pub fn oracle_prior(reference: &Reference, sample: &StrokeSample) -> Result<PriorData> {
    let affines = sample
        .true_affines
        .as_ref()
        .ok_or_else(|| Error::sample(&sample.sample_id, "no recorded affines for an oracle prior"))?;
    prior_from_transforms(reference, affines)
}

/// Untransformed reference strokes, the baseline a registration must beat.
pub fn identity_prior(reference: &Reference) -> PriorData {
    let ids = vec![AffineStrokeTransform::identity(); reference.len()];
    prior_from_transforms(reference, &ids).expect("one transform per stroke")
}

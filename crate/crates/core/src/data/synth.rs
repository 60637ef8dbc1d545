use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::AffineStrokeTransform;
use crate::raster::{GrayImage, Mask};

use super::render::{render_stroke, style_width};
use super::{generate_layouts, render_layout, ReferenceLayout, StrokeSample, StrokeStyle};

const MAX_ROTATION_DEG: f64 = 15.0;
const SCALE_RANGE: (f64, f64) = (0.8, 1.2);
const MAX_TRANSLATION: f64 = 20.0;
const MAX_ELASTIC: f64 = 8.0;
const PLACEMENT_RETRIES: usize = 20;

/// Bounds of the per-stroke affine jitter and the global elastic jitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    /// Maximum absolute rotation per stroke, degrees.
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum translation norm per stroke, pixels.
    pub translation: f64,
    /// Maximum amplitude of the smooth global displacement, pixels.
    pub elastic: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            scale_min: 0.85,
            scale_max: 1.15,
            translation: 12.0,
            elastic: 4.0,
        }
    }
}

impl JitterConfig {
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            translation: 0.0,
            elastic: 0.0,
        }
    }

    /// Same config with every bound forced into its legal range.
    pub fn clamped(&self) -> Self {
        let lo = self.scale_min.clamp(SCALE_RANGE.0, SCALE_RANGE.1);
        let hi = self.scale_max.clamp(SCALE_RANGE.0, SCALE_RANGE.1).max(lo);
        Self {
            rotation_deg: self.rotation_deg.abs().min(MAX_ROTATION_DEG),
            scale_min: lo,
            scale_max: hi,
            translation: self.translation.abs().min(MAX_TRANSLATION),
            elastic: self.elastic.abs().min(MAX_ELASTIC),
        }
    }
}

/// Sum of low-frequency sinusoids scaled so `|e(q)|` never exceeds the amplitude
/// in either component.
struct ElasticField {
    amplitude: f64,
    waves: [[f64; 4]; 6],
}

impl ElasticField {
    fn random(amplitude: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut waves = [[0.0; 4]; 6];
        for w in waves.iter_mut() {
            *w = [
                rng.gen_range(-2.0..2.0) * 2.0 * PI / 256.0,
                rng.gen_range(-2.0..2.0) * 2.0 * PI / 256.0,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.3..1.0),
            ];
        }
        Self { amplitude, waves }
    }

    fn at(&self, q: [f64; 2]) -> [f64; 2] {
        if self.amplitude == 0.0 {
            return [0.0, 0.0];
        }
        let mut out = [0.0; 2];
        for (axis, chunk) in self.waves.chunks(3).enumerate() {
            let norm: f64 = chunk.iter().map(|w| w[3]).sum();
            let s: f64 = chunk
                .iter()
                .map(|w| w[3] * (w[0] * q[0] + w[1] * q[1] + w[2]).sin())
                .sum();
            out[axis] = self.amplitude * s / norm;
        }
        out
    }
}

/// Renders a target character from `layout` with every stroke independently
/// jittered about its own centroid. The generating affine of each stroke is
/// recorded in `true_affines`.
pub fn synthesize_sample(
    layout: &ReferenceLayout,
    style: StrokeStyle,
    jitter: &JitterConfig,
    seed: u64,
) -> Result<StrokeSample> {
    let jitter = jitter.clamped();
    let (_, ref_masks) = render_layout(layout, style)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elastic = ElasticField::random(jitter.elastic, &mut rng);
    let sample_id = format!("l{:04}-{seed:016x}", layout.layout_id);

    let mut composite = GrayImage::canvas();
    let mut masks = Vec::with_capacity(layout.strokes.len());
    let mut affines = Vec::with_capacity(layout.strokes.len());
    for (k, (prim, ref_mask)) in layout.strokes.iter().zip(&ref_masks).enumerate() {
        let center = ref_mask
            .centroid()
            .ok_or_else(|| Error::sample(&sample_id, format!("stroke {k} renders empty")))?;
        let center = [center.0, center.1];
        let angle = rng.gen_range(-jitter.rotation_deg..=jitter.rotation_deg).to_radians();
        let scale = rng.gen_range(jitter.scale_min..=jitter.scale_max);
        let width = style_width(prim, style);
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let shift = sample_disk(&mut rng, jitter.translation);
            let t = AffineStrokeTransform::similarity(center, angle, scale, shift);
            let img = match style {
                StrokeStyle::Calligraphy => {
                    let inv = t.invert();
                    render_stroke(&prim.control_points, width, |q| {
                        let e = elastic.at(q);
                        inv.apply([q[0] - e[0], q[1] - e[1]])
                    })
                }
                StrokeStyle::Skeleton => {
                    let pts: Vec<[f64; 2]> = prim
                        .control_points
                        .iter()
                        .map(|&p| {
                            let q = t.apply(p);
                            let e = elastic.at(q);
                            [q[0] + e[0], q[1] + e[1]]
                        })
                        .collect();
                    render_stroke(&pts, width, |q| q)
                }
            };
            let mask = img.binarize(0.5);
            if !mask.is_empty() {
                placed = Some((t, img, mask));
                break;
            }
        }
        let (t, img, mask) = placed.ok_or_else(|| {
            Error::sample(&sample_id, format!("stroke {k} left the canvas after {PLACEMENT_RETRIES} placements"))
        })?;
        composite.max_with(&img);
        masks.push(mask);
        affines.push(t);
    }
    Ok(StrokeSample {
        sample_id,
        target_image: composite,
        stroke_masks: masks,
        layout_id: layout.layout_id,
        categories: layout.categories(),
        style,
        true_affines: Some(affines),
    })
}

fn sample_disk(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    if radius == 0.0 {
        return [0.0, 0.0];
    }
    loop {
        let p = [rng.gen_range(-radius..=radius), rng.gen_range(-radius..=radius)];
        if p[0] * p[0] + p[1] * p[1] <= radius * radius {
            return p;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_samples: usize,
    pub n_layouts: usize,
    pub style: StrokeStyle,
    pub jitter: JitterConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_samples: 250,
            n_layouts: 50,
            style: StrokeStyle::Calligraphy,
            jitter: JitterConfig::default(),
            seed: 0,
        }
    }
}

/// Layouts plus `n_samples` samples assigned to layouts round-robin.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(Vec<ReferenceLayout>, Vec<StrokeSample>)> {
    let layouts = generate_layouts(cfg.n_layouts.max(1), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3b_1e00_0001);
    let seeds: Vec<u64> = (0..cfg.n_samples).map(|_| rng.gen()).collect();
    let samples = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| synthesize_sample(&layouts[i % layouts.len()], cfg.style, &cfg.jitter, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((layouts, samples))
}

/// Reference stroke coverages pushed through `affines`, sampled bilinearly
/// and thresholded at 0.5.
pub fn transform_strokes(ref_strokes: &[GrayImage], affines: &[AffineStrokeTransform]) -> Vec<Mask> {
    ref_strokes
        .iter()
        .zip(affines)
        .map(|(img, t)| crate::field::render_affine_image(img, t).0.binarize(0.5))
        .collect()
}

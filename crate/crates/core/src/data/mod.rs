//! Dataset model: stroke primitives, reference layouts, synthetic samples and
//! the on-disk dataset format.

mod dataset;
mod layout;
mod render;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::AffineStrokeTransform;
use crate::raster::{GrayImage, Mask, CANVAS};

pub use dataset::{read_dataset, DEFAULT_SPLIT, write_dataset, Dataset, DatasetManifest, ManifestEntry, SampleTruth};
pub use layout::generate_layouts;
pub use render::{render_layout, render_layout_strokes, render_stroke, stroke_intensity};
pub use synth::{generate_corpus, synthesize_sample, transform_strokes, CorpusConfig, JitterConfig};

/// Number of stroke categories the segmentation stage predicts.
pub const NUM_CATEGORIES: usize = 7;
/// Stroke width used for every skeleton-style render.
pub const SKELETON_WIDTH: f64 = 6.0;
pub const MIN_STROKES: usize = 2;
pub const MAX_STROKES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeKind {
    Horizontal,
    Vertical,
    LeftFalling,
    RightFalling,
    Dot,
    Hook,
    Turning,
}

impl StrokeKind {
    pub const ALL: [StrokeKind; 7] = [
        StrokeKind::Horizontal,
        StrokeKind::Vertical,
        StrokeKind::LeftFalling,
        StrokeKind::RightFalling,
        StrokeKind::Dot,
        StrokeKind::Hook,
        StrokeKind::Turning,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrokeKind::Horizontal => "horizontal",
            StrokeKind::Vertical => "vertical",
            StrokeKind::LeftFalling => "left_falling",
            StrokeKind::RightFalling => "right_falling",
            StrokeKind::Dot => "dot",
            StrokeKind::Hook => "hook",
            StrokeKind::Turning => "turning",
        }
    }
}

impl fmt::Display for StrokeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrokeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrokeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stroke kind {s:?}")))
    }
}

/// Category index in `0..NUM_CATEGORIES`.
pub fn categorize(kind: StrokeKind) -> u8 {
    match kind {
        StrokeKind::Horizontal => 0,
        StrokeKind::Vertical => 1,
        StrokeKind::LeftFalling => 2,
        StrokeKind::RightFalling => 3,
        StrokeKind::Dot => 4,
        StrokeKind::Hook => 5,
        StrokeKind::Turning => 6,
    }
}

/// Category of a stroke kind given by name; unknown names are rejected.
pub fn categorize_name(kind: &str) -> Result<u8> {
    Ok(categorize(kind.parse()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeStyle {
    Calligraphy,
    Skeleton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokePrimitive {
    pub kind: StrokeKind,
    pub control_points: Vec<[f64; 2]>,
    pub width: f64,
}

fn horizontal_ok(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dx > 0.0 && dy.abs() < 0.3 * dx.abs()
}

fn vertical_ok(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dy > 0.0 && dx.abs() < 0.3 * dy.abs()
}

impl StrokePrimitive {
    /// Checks canvas bounds, width, degeneracy and the kind's shape rule.
    pub fn validate(&self) -> Result<()> {
        let pts = &self.control_points;
        let bad = |why: &str| Err(Error::invalid(format!("{} stroke: {why}", self.kind)));
        if !(2..=5).contains(&pts.len()) {
            return bad("needs 2 to 5 control points");
        }
        if !(self.width >= 2.0) {
            return bad("width below 2 px");
        }
        let limit = CANVAS as f64;
        if pts
            .iter()
            .any(|p| !(0.0..limit).contains(&p[0]) || !(0.0..limit).contains(&p[1]))
        {
            return bad("control point outside the canvas");
        }
        if pts.windows(2).any(|w| w[0] == w[1]) {
            return bad("zero-length segment");
        }
        let segs: Vec<([f64; 2], [f64; 2])> = pts.windows(2).map(|w| (w[0], w[1])).collect();
        let ok = match self.kind {
            StrokeKind::Horizontal => segs.iter().all(|&(a, b)| horizontal_ok(a, b)),
            StrokeKind::Vertical => segs.iter().all(|&(a, b)| vertical_ok(a, b)),
            StrokeKind::LeftFalling => segs.iter().all(|&(a, b)| b[1] > a[1] && b[0] < a[0]),
            StrokeKind::RightFalling => segs.iter().all(|&(a, b)| b[1] > a[1] && b[0] > a[0]),
            StrokeKind::Dot => pts.len() == 2 && self.length() <= 30.0,
            StrokeKind::Hook => {
                let (a, b) = segs[segs.len() - 1];
                segs.len() >= 2
                    && segs[..segs.len() - 1].iter().all(|&(a, b)| vertical_ok(a, b))
                    && b[1] < a[1]
                    && b[0] < a[0]
            }
            StrokeKind::Turning => {
                segs.len() == 2 && horizontal_ok(segs[0].0, segs[0].1) && vertical_ok(segs[1].0, segs[1].1)
            }
        };
        if ok {
            Ok(())
        } else {
            bad("control points violate the kind's shape rule")
        }
    }

    pub fn length(&self) -> f64 {
        self.control_points
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLayout {
    pub layout_id: u32,
    pub strokes: Vec<StrokePrimitive>,
    pub char_class: u32,
}

impl ReferenceLayout {
    pub fn validate(&self) -> Result<()> {
        let n = self.strokes.len();
        if !(MIN_STROKES..=MAX_STROKES).contains(&n) {
            return Err(Error::invalid(format!(
                "layout {} has {n} strokes, expected {MIN_STROKES}..={MAX_STROKES}",
                self.layout_id
            )));
        }
        self.strokes.iter().try_for_each(StrokePrimitive::validate)
    }

    pub fn categories(&self) -> Vec<u8> {
        self.strokes.iter().map(|s| categorize(s.kind)).collect()
    }
}

/// One character: target image plus its ordered ground-truth stroke masks.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeSample {
    pub sample_id: String,
    pub target_image: GrayImage,
    pub stroke_masks: Vec<Mask>,
    pub layout_id: u32,
    pub categories: Vec<u8>,
    pub style: StrokeStyle,
    /// Reference-to-target affine of each stroke as generated, when known.
    pub true_affines: Option<Vec<AffineStrokeTransform>>,
}

impl StrokeSample {
    /// Checks mask count against the layout and the union-equals-support rule.
    pub fn validate(&self, layout: &ReferenceLayout) -> Result<()> {
        let id = &self.sample_id;
        if self.stroke_masks.len() != layout.strokes.len() {
            return Err(Error::sample(
                id,
                format!(
                    "{} stroke masks but layout {} has {} strokes",
                    self.stroke_masks.len(),
                    layout.layout_id,
                    layout.strokes.len()
                ),
            ));
        }
        if self.categories != layout.categories() {
            return Err(Error::sample(id, "categories disagree with the layout"));
        }
        let mut union = Mask::new(self.target_image.width(), self.target_image.height());
        for m in &self.stroke_masks {
            if (m.width(), m.height()) != (union.width(), union.height()) {
                return Err(Error::sample(id, "stroke mask resolution differs from target"));
            }
            union.union_with(m);
        }
        if union != self.target_image.binarize(0.5) {
            return Err(Error::sample(id, "stroke union differs from the target support"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_table() {
        assert_eq!(categorize(StrokeKind::Horizontal), 0);
        assert_eq!(categorize(StrokeKind::Hook), 5);
        let mut image: Vec<u8> = StrokeKind::ALL.iter().map(|&k| categorize(k)).collect();
        image.sort();
        assert_eq!(image, (0..7).collect::<Vec<u8>>());
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!(categorize_name("swirl").is_err());
        assert_eq!(categorize_name("turning").unwrap(), 6);
    }

    #[test]
    fn validator_rules() {
        let h = StrokePrimitive {
            kind: StrokeKind::Horizontal,
            control_points: vec![[40.0, 100.0], [140.0, 110.0]],
            width: 8.0,
        };
        assert!(h.validate().is_ok());
        let steep = StrokePrimitive {
            control_points: vec![[40.0, 100.0], [60.0, 140.0]],
            ..h.clone()
        };
        assert!(steep.validate().is_err());
        let degenerate = StrokePrimitive {
            control_points: vec![[40.0, 100.0], [40.0, 100.0]],
            ..h.clone()
        };
        assert!(degenerate.validate().is_err());
        let thin = StrokePrimitive { width: 1.5, ..h.clone() };
        assert!(thin.validate().is_err());
        let outside = StrokePrimitive {
            control_points: vec![[40.0, 100.0], [256.0, 110.0]],
            ..h
        };
        assert!(outside.validate().is_err());
    }
}

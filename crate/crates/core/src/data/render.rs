use crate::error::Result;
use crate::raster::{GrayImage, Mask, CANVAS};

use super::{ReferenceLayout, StrokePrimitive, StrokeStyle, SKELETON_WIDTH};

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Anti-aliased coverage of a round-capped polyline of the given width at `p`.
///
/// Coverage crosses 0.5 exactly at distance `width / 2`, so thresholding at
/// 0.5 yields the thick-polyline mask.
pub fn stroke_intensity(points: &[[f64; 2]], width: f64, p: [f64; 2]) -> f32 {
    let d = points
        .windows(2)
        .map(|w| segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min);
    (width * 0.5 + 0.5 - d).clamp(0.0, 1.0) as f32
}

/// Coverage image of one stroke. `source_of` maps each output pixel to the
/// point where the stroke's own (untransformed) geometry is evaluated.
pub fn render_stroke(
    points: &[[f64; 2]],
    width: f64,
    source_of: impl Fn([f64; 2]) -> [f64; 2],
) -> GrayImage {
    let mut img = GrayImage::canvas();
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            let v = stroke_intensity(points, width, source_of([x as f64, y as f64]));
            if v > 0.0 {
                img.set(x, y, v);
            }
        }
    }
    img
}

pub(crate) fn style_width(prim: &StrokePrimitive, style: StrokeStyle) -> f64 {
    match style {
        StrokeStyle::Calligraphy => prim.width,
        StrokeStyle::Skeleton => SKELETON_WIDTH,
    }
}

/// Per-stroke coverage images in layout order.
pub fn render_layout_strokes(layout: &ReferenceLayout, style: StrokeStyle) -> Result<Vec<GrayImage>> {
    layout.validate()?;
    Ok(layout
        .strokes
        .iter()
        .map(|prim| render_stroke(&prim.control_points, style_width(prim, style), |p| p))
        .collect())
}

/// Composite image (pixelwise max of stroke coverages) and per-stroke masks.
pub fn render_layout(layout: &ReferenceLayout, style: StrokeStyle) -> Result<(GrayImage, Vec<Mask>)> {
    let strokes = render_layout_strokes(layout, style)?;
    let mut composite = GrayImage::canvas();
    for img in &strokes {
        composite.max_with(img);
    }
    Ok((composite, strokes.iter().map(|s| s.binarize(0.5)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StrokeKind;

    fn layout(strokes: Vec<StrokePrimitive>) -> ReferenceLayout {
        ReferenceLayout {
            layout_id: 0,
            strokes,
            char_class: 0,
        }
    }

    fn horizontal(y: f64) -> StrokePrimitive {
        StrokePrimitive {
            kind: StrokeKind::Horizontal,
            control_points: vec![[60.0, y], [180.0, y]],
            width: 12.0,
        }
    }

    fn vertical() -> StrokePrimitive {
        StrokePrimitive {
            kind: StrokeKind::Vertical,
            control_points: vec![[120.0, 50.0], [120.0, 200.0]],
            width: 12.0,
        }
    }

    #[test]
    fn skeleton_horizontal_area_matches_thick_line() {
        let l = layout(vec![horizontal(100.3), vertical()]);
        let (_, masks) = render_layout(&l, StrokeStyle::Skeleton).unwrap();
        let expected = 6.0 * 120.0;
        let got = masks[0].count() as f64;
        assert!((got - expected).abs() <= 0.15 * expected, "{got} vs {expected}");
        let bb = masks[0].bounding_box().unwrap();
        assert!((5..=7).contains(&bb.height()), "{bb:?}");
    }

    #[test]
    fn background_is_zero() {
        let l = layout(vec![horizontal(100.0), horizontal(150.0)]);
        let (img, _) = render_layout(&l, StrokeStyle::Calligraphy).unwrap();
        assert_eq!(img.get(5, 5), 0.0);
        assert_eq!(img.get(250, 250), 0.0);
    }

    #[test]
    fn crossing_strokes_composite_is_union() {
        let l = layout(vec![horizontal(100.0), vertical()]);
        let (img, masks) = render_layout(&l, StrokeStyle::Calligraphy).unwrap();
        let mut union = masks[0].clone();
        union.union_with(&masks[1]);
        assert_eq!(img.binarize(0.5), union);
        assert!(masks[0].intersection_count(&masks[1]) > 0);
    }

    #[test]
    fn degenerate_stroke_is_rejected() {
        let mut h = horizontal(100.0);
        h.control_points[1] = h.control_points[0];
        assert!(render_layout(&layout(vec![h, vertical()]), StrokeStyle::Calligraphy).is_err());
    }
}

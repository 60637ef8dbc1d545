//! Colored overlays of extracted strokes and four-up inspection panels.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::prior::PriorData;
use crate::raster::{GrayImage, Mask};
use crate::segnet::SegmentationResult;

/// Stroke `i` is drawn in `PALETTE[i % 10]`.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
    [0, 0, 128],
    [170, 110, 40],
];
pub const PLACEHOLDER: [u8; 3] = [128, 128, 128];
const INK: f32 = 0.75;

fn base(target: &GrayImage) -> RgbImage {
    RgbImage::from_fn(target.width() as u32, target.height() as u32, |x, y| {
        let v = (255.0 * (1.0 - INK * target.get(x as usize, y as usize).clamp(0.0, 1.0))).round() as u8;
        Rgb([v, v, v])
    })
}

fn paint(img: &mut RgbImage, mask: &Mask, color: [u8; 3]) {
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                img.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

/// The target in gray with stroke `i` painted in palette entry `i`, later
/// strokes over earlier ones.
pub fn render_overlay(target: &GrayImage, strokes: &[Mask]) -> RgbImage {
    let mut img = base(target);
    for (i, m) in strokes.iter().enumerate() {
        paint(&mut img, m, PALETTE[i % PALETTE.len()]);
    }
    img
}

fn placeholder(w: u32, h: u32) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb(PLACEHOLDER))
}

/// `target | prior | segmentation argmax | extraction`, side by side. An
/// empty extraction shows a gray placeholder.
pub fn render_panel(target: &GrayImage, prior: &PriorData, seg: &SegmentationResult, strokes: &[Mask]) -> Result<RgbImage> {
    let (w, h) = (target.width() as u32, target.height() as u32);
    let blank = GrayImage::new(target.width(), target.height());
    let prior_img = render_overlay(&blank, &prior.masks());
    let mut seg_img = base(&blank);
    for (i, c) in seg.argmax()?.into_iter().enumerate() {
        if let Some(c) = c {
            seg_img.put_pixel(i as u32 % w, i as u32 / w, Rgb(PALETTE[c as usize]));
        }
    }
    let extraction = if strokes.iter().all(Mask::is_empty) {
        placeholder(w, h)
    } else {
        render_overlay(target, strokes)
    };
    let mut panel = RgbImage::new(4 * w, h);
    for (k, part) in [base(target), prior_img, seg_img, extraction].iter().enumerate() {
        image::imageops::replace(&mut panel, part, (k as u32 * w) as i64, 0);
    }
    Ok(panel)
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn bar(y: usize) -> Mask {
        let mut m = Mask::canvas();
        for x in 20..200 {
            for dy in 0..6 {
                m.set(x, y + dy, true);
            }
        }
        m
    }

    fn colors(img: &RgbImage) -> BTreeSet<[u8; 3]> {
        img.pixels().map(|p| p.0).filter(|c| PALETTE.contains(c)).collect()
    }

    #[test]
    fn one_palette_entry_per_stroke() {
        let strokes: Vec<Mask> = (0..4).map(|i| bar(20 + 30 * i)).collect();
        let img = render_overlay(&GrayImage::canvas(), &strokes);
        assert_eq!(colors(&img).len(), 4);
    }

    #[test]
    fn permuted_strokes_render_differently() {
        let strokes = vec![bar(20), bar(80)];
        let swapped = vec![bar(80), bar(20)];
        let t = GrayImage::canvas();
        assert_ne!(render_overlay(&t, &strokes), render_overlay(&t, &swapped));
    }
}

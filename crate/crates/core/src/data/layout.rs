use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ReferenceLayout, StrokeKind, StrokePrimitive, MAX_STROKES, MIN_STROKES};

const LO: f64 = 32.0;
const HI: f64 = 224.0;

/// `n` distinct reference layouts, a pure function of `(n, seed)`.
///
/// Stroke kinds are drawn from a shuffled bag holding every kind once, refilled
/// when empty, so category counts stay balanced across the corpus.
pub fn generate_layouts(n: usize, seed: u64) -> Vec<ReferenceLayout> {
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bag: Vec<StrokeKind> = Vec::new();
    let mut out: Vec<ReferenceLayout> = Vec::with_capacity(n);
    while out.len() < n {
        let count = rng.gen_range(MIN_STROKES..=MAX_STROKES);
        let strokes: Vec<StrokePrimitive> = (0..count)
            .map(|_| {
                if bag.is_empty() {
                    bag.extend_from_slice(&StrokeKind::ALL);
                    bag.shuffle(&mut rng);
                }
                let kind = bag.pop().unwrap();
                primitive(kind, &mut rng)
            })
            .collect();
        if out.iter().any(|l| l.strokes == strokes) {
            continue;
        }
        let id = out.len() as u32;
        out.push(ReferenceLayout {
            layout_id: id,
            strokes,
            char_class: id,
        });
    }
    out
}

fn primitive(kind: StrokeKind, rng: &mut ChaCha8Rng) -> StrokePrimitive {
    let width = rng.gen_range(8.0..=20.0_f64).round();
    let control_points = match kind {
        StrokeKind::Horizontal => {
            let len = rng.gen_range(50.0..150.0);
            let x = rng.gen_range(LO..HI - len);
            let y = rng.gen_range(LO + 10.0..HI - 10.0);
            let rise = rng.gen_range(-0.12..0.12) * len;
            if rng.gen_bool(0.5) {
                vec![[x, y], [x + len, y + rise]]
            } else {
                let mid = rng.gen_range(-0.05..0.05) * len;
                vec![[x, y], [x + len * 0.5, y + rise * 0.5 + mid], [x + len, y + rise]]
            }
        }
        StrokeKind::Vertical => {
            let len = rng.gen_range(50.0..150.0);
            let y = rng.gen_range(LO..HI - len);
            let x = rng.gen_range(LO + 10.0..HI - 10.0);
            let lean = rng.gen_range(-0.12..0.12) * len;
            vec![[x, y], [x + lean, y + len]]
        }
        StrokeKind::LeftFalling => {
            let (w, h) = (rng.gen_range(30.0..80.0), rng.gen_range(40.0..100.0));
            let x = rng.gen_range(LO + w..HI);
            let y = rng.gen_range(LO..HI - h);
            let bend = rng.gen_range(0.1..0.4);
            vec![[x, y], [x - w * bend, y + h * 0.5], [x - w, y + h]]
        }
        StrokeKind::RightFalling => {
            let (w, h) = (rng.gen_range(30.0..80.0), rng.gen_range(40.0..100.0));
            let x = rng.gen_range(LO..HI - w);
            let y = rng.gen_range(LO..HI - h);
            let bend = rng.gen_range(0.1..0.4);
            vec![[x, y], [x + w * bend, y + h * 0.5], [x + w, y + h]]
        }
        StrokeKind::Dot => {
            let len = rng.gen_range(10.0..22.0);
            let angle = rng.gen_range(0.5..1.2_f64);
            let x = rng.gen_range(LO..HI - len);
            let y = rng.gen_range(LO..HI - len);
            vec![[x, y], [x + len * angle.cos(), y + len * angle.sin()]]
        }
        StrokeKind::Hook => {
            let len = rng.gen_range(50.0..120.0);
            let flick = rng.gen_range(12.0..22.0);
            let x = rng.gen_range(LO + flick..HI - 5.0);
            let y = rng.gen_range(LO..HI - len);
            let lean = rng.gen_range(-0.08..0.08) * len;
            vec![[x, y], [x + lean, y + len], [x + lean - flick, y + len - flick * 0.8]]
        }
        StrokeKind::Turning => {
            let a = rng.gen_range(40.0..110.0);
            let b = rng.gen_range(40.0..110.0);
            let x = rng.gen_range(LO..HI - a);
            let y = rng.gen_range(LO..HI - b);
            let tuck = rng.gen_range(0.0..0.1) * b;
            vec![[x, y], [x + a, y], [x + a - tuck, y + b]]
        }
    };
    StrokePrimitive {
        kind,
        control_points,
        width,
    }
}

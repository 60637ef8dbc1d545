use super::*;
use crate::field::AffineStrokeTransform;
use crate::prior::StrokePrior;

fn rect(x0: usize, y0: usize, w: usize, h: usize) -> Mask {
    let mut m = Mask::canvas();
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            m.set(x, y, true);
        }
    }
    m
}

fn prior_of(masks: Vec<(Mask, u8)>) -> PriorData {
    PriorData {
        strokes: masks
            .into_iter()
            .map(|(mask, category)| StrokePrior {
                mask,
                transform: AffineStrokeTransform::identity(),
                category,
            })
            .collect(),
    }
}

fn fake_seg(c: usize) -> SegmentationResult {
    let probs = Tensor::arange(0f32, (7 * 256 * 256) as f32, &Device::Cpu)
        .unwrap()
        .affine(1.0 / (7.0 * 65536.0), 0.0)
        .unwrap()
        .reshape((7, 256, 256))
        .unwrap();
    SegmentationResult {
        masks: vec![Mask::canvas(); 7],
        probs,
        feature64: Tensor::ones((c, 64, 64), DType::F32, &Device::Cpu).unwrap(),
    }
}

#[test]
fn crop_rule_arithmetic() {
    let r = adaptive_crop(&rect(78, 108, 100, 40), CROP);
    assert_eq!(r.side, 140);
    assert_eq!((r.x, r.y), (58, 58));
    let dot = adaptive_crop(&rect(120, 120, 4, 4), CROP);
    assert_eq!(dot.side, MIN_CROP);
    assert_eq!(adaptive_crop(&Mask::canvas(), CROP), CropRecord::full(CROP));
    assert_eq!(adaptive_crop(&rect(0, 0, 256, 200), CROP).side, 256);
}

#[test]
fn border_boxes_are_shifted_inside() {
    // bbox 60x30 touching the right and bottom edges: side 84, ideal start
    // 196 + 30 - 42 = 184 > 256 - 84 = 172.
    let r = adaptive_crop(&rect(196, 226, 60, 30), CROP);
    assert_eq!(r.side, 84);
    assert_eq!((r.x, r.y), (172, 172));
    let r = adaptive_crop(&rect(0, 0, 10, 50), CROP);
    assert_eq!((r.x, r.y, r.side), (0, 0, 70));
}

#[test]
fn crop_uncrop_round_trip() {
    for m in [rect(78, 108, 100, 40), rect(120, 120, 12, 12), rect(10, 30, 12, 200), rect(200, 200, 50, 50)] {
        let rec = adaptive_crop(&m, CROP);
        let back = uncrop_image(&crop_mask(&m, &rec).unwrap(), &rec).unwrap().binarize(0.5);
        assert!(back.iou(&m) > 0.98, "{rec:?}: {}", back.iou(&m));
    }
}

#[test]
fn crop_of_identity_box_is_exact() {
    let rec = CropRecord { x: 64, y: 32, side: 128, size: 128 };
    let mut img = GrayImage::canvas();
    img.set(70, 40, 1.0);
    let c = GrayImage::from_tensor(&crop_tensor(&img.to_tensor(&Device::Cpu).unwrap(), &rec).unwrap()).unwrap();
    assert_eq!(c.get(6, 8), 1.0);
    assert_eq!(c.data().iter().sum::<f32>(), 1.0);
}

#[test]
fn stack_layout() {
    let p = prior_of(vec![(rect(40, 40, 80, 10), 0), (rect(40, 100, 80, 10), 0), (rect(150, 40, 10, 80), 1)]);
    let seg = fake_seg(8);
    let target = p.strokes[0].mask.to_image();
    let (stack, rec) = build_inputs(&target, 0, &p, &seg, Ablation::default(), CROP).unwrap();
    assert_eq!(stack.tensor.dims(), &[1, BASE_CHANNELS + 8, CROP, CROP]);
    let peers = stack.channel(3).unwrap();
    assert!(peers.data().iter().any(|&v| v == PEER_VALUE));
    // The only stroke of category 1 has no peers.
    let (alone, _) = build_inputs(&target, 2, &p, &seg, Ablation::default(), CROP).unwrap();
    assert!(alone.channel(3).unwrap().data().iter().all(|&v| v != PEER_VALUE));
    // The segment channel is the category's probability map cropped.
    let expect = crop_tensor(&seg.probs.narrow(0, 0, 1).unwrap().unsqueeze(0).unwrap(), &rec).unwrap();
    let got = stack.tensor.narrow(1, 2, 1).unwrap();
    let diff = (expect - got).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(diff < 1e-6);
    assert!(build_inputs(&target, 3, &p, &seg, Ablation::default(), CROP).is_err());
}

#[test]
fn ablations_zero_their_channels() {
    let p = prior_of(vec![(rect(40, 40, 80, 10), 0), (rect(150, 40, 10, 80), 1)]);
    let seg = fake_seg(4);
    let target = p.strokes[0].mask.to_image();
    let sum = |t: &Tensor, c: usize, n: usize| t.narrow(1, c, n).unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
    let (s, _) = build_inputs(&target, 0, &p, &seg, Ablation { no_prior: true, no_semantic: false }, CROP).unwrap();
    assert_eq!(sum(&s.tensor, 1, 1) + sum(&s.tensor, 3, 1), 0.0);
    assert!(sum(&s.tensor, 0, 1) > 0.0 && sum(&s.tensor, 2, 1) > 0.0);
    let (s, _) = build_inputs(&target, 0, &p, &seg, Ablation { no_prior: false, no_semantic: true }, CROP).unwrap();
    assert_eq!(sum(&s.tensor, 2, 1) + sum(&s.tensor, 4, 4), 0.0);
    assert!(sum(&s.tensor, 1, 1) > 0.0);
}

#[test]
fn forward_shape_range_and_identity_stn() {
    let cfg = ExtractConfig { channel_scale: 0.125, feature_channels: 4, ..Default::default() };
    let model = ExtractNetModel::new(cfg, DType::F32).unwrap();
    let p = prior_of(vec![(rect(40, 40, 80, 10), 0), (rect(150, 40, 10, 80), 1)]);
    let seg = fake_seg(4);
    let target = p.strokes[0].mask.to_image();
    let (stack, _) = build_inputs(&target, 0, &p, &seg, Ablation::default(), CROP).unwrap();
    let out = model.forward(&stack).unwrap();
    assert_eq!((out.width(), out.height()), (CROP, CROP));
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(out, model.forward(&stack).unwrap());
    let refined = model.refined_inputs(&stack).unwrap();
    let diff = (refined - &stack.tensor).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(diff < 1e-6);
    let bad = ExtractInputStack { tensor: Tensor::zeros((1, 3, CROP, CROP), DType::F32, &Device::Cpu).unwrap() };
    assert!(model.forward(&bad).is_err());
    assert_eq!(model.extract_strokes(&target, &p, &seg).unwrap().len(), 2);
}

#[test]
fn smaller_crop_space() {
    let cfg = ExtractConfig { channel_scale: 0.125, feature_channels: 4, crop: 64, ..Default::default() };
    let model = ExtractNetModel::new(cfg, DType::F32).unwrap();
    let p = prior_of(vec![(rect(40, 40, 80, 10), 0)]);
    let seg = fake_seg(4);
    let target = p.strokes[0].mask.to_image();
    let (stack, rec) = build_inputs(&target, 0, &p, &seg, Ablation::default(), 64).unwrap();
    assert_eq!(stack.tensor.dims(), &[1, BASE_CHANNELS + 4, 64, 64]);
    assert_eq!(rec.scale(), 64.0 / 112.0);
    assert_eq!(model.forward(&stack).unwrap().width(), 64);
    let (big, _) = build_inputs(&target, 0, &p, &seg, Ablation::default(), CROP).unwrap();
    assert!(model.forward(&big).is_err());
    let odd = ExtractConfig { crop: 66, ..Default::default() };
    assert!(ExtractNetModel::new(odd, DType::F32).is_err());
}

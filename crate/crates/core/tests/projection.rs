use labelswitch::augmentation::{AugmentDraw, AugmentationRanges};
use labelswitch::detection::{BoundingBox, Detection, DetectorProfile};
use labelswitch::image::{Image, Patch};
use labelswitch::projection::{
    composite_patch, make_placement, project_x, project_y, select_target_objects, CompositeMap, PixelRect,
    ProjectionParams,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn det(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Detection {
    Detection {
        bbox: BoundingBox { cx, cy, w, h },
        class_id,
        confidence: 0.9,
    }
}

fn profile() -> DetectorProfile {
    DetectorProfile::new(vec!["car".into(), "bus".into()], 0, 0.25, 0.45).unwrap()
}

#[test]
fn hand_values() {
    // 0.9 + 0.2 * (0.8 * 0.9)^2 * 0.4
    assert!((project_x(0.9, 0.8, 0.2) - 0.941472).abs() < 1e-9);
    assert!((project_y(0.6, 1.0) - 0.636).abs() < 1e-9);
    assert!((project_y(0.4, 1.0) - 0.384).abs() < 1e-9);
    assert_eq!(project_x(0.3, 0.0, 0.7), 0.3);
}

#[test]
fn placement_examples() {
    let params = ProjectionParams::default();
    let p = make_placement(&det(0, 0.5, 0.5, 0.2, 0.1), &params);
    assert_eq!((p.cx, p.cy), (0.5, 0.5));
    assert!((p.width - 0.08).abs() < 1e-12 && (p.height - 0.015).abs() < 1e-12);

    let params = ProjectionParams {
        rho_w: 0.01,
        rho_h: 0.01,
        ..ProjectionParams::default()
    };
    let p = make_placement(&det(0, 0.9, 0.8, 0.1, 0.1), &params);
    assert!((p.cx - 0.941472).abs() < 1e-9);
    assert!((p.cy - 0.992).abs() < 1e-9);

    let params = ProjectionParams {
        rho_w: 0.5,
        ..ProjectionParams::default()
    };
    let p = make_placement(&det(0, 0.95, 0.8, 0.3, 0.1), &params);
    assert!((p.cx + p.width / 2.0 - 1.0).abs() < 1e-12);
}

#[test]
fn selection_examples() {
    let params = ProjectionParams::default();
    let kept = det(0, 0.5, 0.5, 0.2, 0.1);
    let flat = det(0, 0.5, 0.5, 0.3, 0.05);
    let bus = det(1, 0.5, 0.5, 0.4, 0.4);
    let out = select_target_objects(&[kept.clone(), flat, bus], &profile(), &params);
    assert_eq!(out, vec![kept]);
}

#[test]
fn degenerate_placement_is_an_error() {
    let frame = Image::filled(10, 10, [0.2; 3]);
    let params = ProjectionParams::default();
    let tiny = make_placement(&det(0, 0.5, 0.5, 0.05, 0.05), &params);
    assert!(composite_patch(&frame, &Patch::filled(4, 0.5), &tiny).is_err());
}

#[test]
fn gray_patch_gives_gray_rectangle() {
    let frame = Image::filled(40, 30, [0.1, 0.2, 0.3]);
    let params = ProjectionParams {
        rho_w: 0.5,
        rho_h: 0.5,
        ..ProjectionParams::default()
    };
    let pl = make_placement(&det(0, 0.4, 0.6, 0.5, 0.4), &params);
    let rect = PixelRect::of(&pl, 40, 30).unwrap();
    let out = composite_patch(&frame, &Patch::filled(5, 0.5), &pl).unwrap();
    for c in 0..3 {
        for y in 0..30 {
            for x in 0..40 {
                let want = if rect.contains(x, y) { 0.5 } else { frame.get(c, y, x) };
                assert_eq!(out.get(c, y, x), want);
            }
        }
    }
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frame = Image::filled(24, 24, [0.3; 3]);
    let size = 4;
    let params = ProjectionParams {
        rho_w: 0.6,
        rho_h: 0.6,
        ..ProjectionParams::default()
    };
    let mut map = CompositeMap::new(24, 24, size);
    map.add(&make_placement(&det(0, 0.45, 0.5, 0.5, 0.45), &params)).unwrap();
    // loss = sum of weights * composited pixels, with fixed random weights
    let weights: Vec<f64> = (0..3 * 24 * 24).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let loss = |v: &[f64]| -> f64 {
        let img = map.apply(&frame, v).unwrap();
        img.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let values: Vec<f64> = (0..size * size * 3).map(|_| rand::Rng::random_range(&mut rng, 0.2..0.8)).collect();
    let mut analytic = vec![0.0; values.len()];
    map.backward(&weights, &mut analytic);
    let h = 1e-4;
    for i in 0..values.len() {
        let mut up = values.clone();
        let mut down = values.clone();
        up[i] += h;
        down[i] -= h;
        let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
        assert!(rel < 1e-3, "texel value {i}: analytic {} numeric {numeric}", analytic[i]);
    }
}

#[test]
fn augmentation_examples() {
    let patch = vec![0.5; 12];
    let draw = AugmentDraw {
        brightness: 1.2,
        contrast: 0.1,
        noise: vec![0.0; 12],
    };
    assert!(draw.apply(&patch).iter().all(|v| (v - 0.7).abs() < 1e-12));
    assert!(draw.apply(&[1.0; 12]).iter().all(|&v| v == 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let id = AugmentationRanges::identity().draw(12, &mut rng);
    let values: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
    assert_eq!(id.apply(&values), values);
}

#[test]
fn identity_augmentation_has_identity_gradient() {
    let draw = AugmentDraw::identity(6);
    let values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let g = [1.0, -2.0, 0.5, 0.0, 3.0, -1.0];
    let h = 1e-6;
    let back = draw.backward(&values, &g);
    for i in 0..6 {
        let mut up = values;
        up[i] += h;
        let numeric: f64 = draw
            .apply(&up)
            .iter()
            .zip(draw.apply(&values))
            .zip(&g)
            .map(|((a, b), gi)| (a - b) / h * gi)
            .sum();
        assert!((numeric - back[i]).abs() < 1e-6);
        assert_eq!(back[i], g[i]);
    }
}

proptest! {
    #[test]
    fn center_is_a_fixed_point(y in 0.0f64..=1.0, a in 0.0f64..5.0, b in 0.0f64..5.0) {
        prop_assert_eq!(project_x(0.5, y, a), 0.5);
        prop_assert_eq!(project_y(0.5, b), 0.5);
    }

    #[test]
    fn pushed_away_from_the_center(x in 0.0f64..=1.0, y in 0.001f64..=1.0, a in 0.01f64..2.0, b in 0.01f64..2.0) {
        let sign = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
        prop_assert_eq!(sign(project_x(x, y, a) - x), sign(x - 0.5));
        prop_assert_eq!(sign(project_y(y, b) - y), sign(y - 0.5));
    }

    #[test]
    fn lower_half_moves_faster_further_down(y1 in 0.5f64..=1.0, y2 in 0.5f64..=1.0, b in 0.01f64..2.0) {
        prop_assume!(y1 < y2);
        prop_assert!(project_y(y1, b) - y1 < project_y(y2, b) - y2);
    }

    #[test]
    fn monotone_in_y(x in 0.0f64..=1.0, y1 in 0.0f64..=1.0, y2 in 0.0f64..=1.0, a in 0.01f64..2.0) {
        let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        let shift = |y| (project_x(x, y, a) - x).abs();
        prop_assert!(shift(lo) <= shift(hi));
    }

    #[test]
    fn composite_leaves_the_exterior_alone(
        cx in 0.1f64..0.9, cy in 0.1f64..0.9, w in 0.1f64..0.6, h in 0.1f64..0.6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..3 * 32 * 20).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let frame = Image::from_planar(32, 20, data).unwrap();
        let params = ProjectionParams { rho_w: 0.7, rho_h: 0.7, ..ProjectionParams::default() };
        let pl = make_placement(&det(0, cx, cy, w, h), &params);
        let patch = Patch::random(6, seed).unwrap();
        if let Ok(rect) = PixelRect::of(&pl, 32, 20) {
            let out = composite_patch(&frame, &patch, &pl).unwrap();
            for c in 0..3 {
                for y in 0..20 {
                    for x in 0..32 {
                        if !rect.contains(x, y) {
                            prop_assert_eq!(out.get(c, y, x).to_bits(), frame.get(c, y, x).to_bits());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn selection_is_an_order_free_subset(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dets: Vec<Detection> = (0..12)
            .map(|_| {
                let r = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rand::Rng::random_range(rng, lo..hi);
                det(rand::Rng::random_range(&mut rng, 0..2), r(&mut rng, 0.1, 0.9), r(&mut rng, 0.1, 0.9),
                    r(&mut rng, 0.01, 0.4), r(&mut rng, 0.01, 0.4))
            })
            .collect();
        let params = ProjectionParams::default();
        let a = select_target_objects(&dets, &profile(), &params);
        prop_assert!(a.iter().all(|d| dets.contains(d)));
        dets.reverse();
        let mut b = select_target_objects(&dets, &profile(), &params);
        b.reverse();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn augmentation_is_reproducible_and_bounded(seed in any::<u64>()) {
        let ranges = AugmentationRanges::default();
        let values: Vec<f64> = (0..48).map(|i| i as f64 / 47.0).collect();
        let a = ranges.draw(48, &mut ChaCha8Rng::seed_from_u64(seed)).apply(&values);
        let b = ranges.draw(48, &mut ChaCha8Rng::seed_from_u64(seed)).apply(&values);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

//! Property tests of invariants that hold for all inputs.

use proptest::prelude::*;
use tpmret::classifier::{argmax, init_model, ArchDescriptor, ConvBlock, Pool};
use tpmret::iip::{bin_class, class_value, compute_iip, make_iik, IikKind};
use tpmret::layout::{parse_layout, rasterize, vectorize, write_layout};
use tpmret::litho::{convolve_direct, convolve_fft, make_gaussian_kernel, Kernel};
use tpmret::pipeline::{iou, plan_chunks};
use tpmret::tiling::{compress_window, extract_window, Reducer, TilingConfig, WindowSampler};
use tpmret::{BBox, LayoutPattern, Polygon, RasterGrid};

fn rects() -> impl Strategy<Value = Vec<(i64, i64, i64, i64)>> {
    prop::collection::vec((-40i64..40, -40i64..40, 1i64..25, 1i64..25), 0..6)
        .prop_map(|v| v.into_iter().map(|(x, y, w, h)| (x, y, x + w, y + h)).collect())
}

fn pattern(r: &[(i64, i64, i64, i64)]) -> LayoutPattern {
    LayoutPattern::new(3, r.iter().map(|&(a, b, c, d)| Polygon::rect(a, b, c, d)).collect()).unwrap()
}

fn grid(w: usize, h: usize, values: Vec<f64>) -> RasterGrid {
    RasterGrid::from_values(w, h, (0.5, 0.5), 1.0, values).unwrap()
}

fn binary_grid(max_side: usize) -> impl Strategy<Value = RasterGrid> {
    (2..max_side, 2..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::bool::weighted(0.3), w * h)
            .prop_map(move |b| grid(w, h, b.into_iter().map(|x| x as u8 as f64).collect()))
    })
}

fn real_grid(max_side: usize) -> impl Strategy<Value = RasterGrid> {
    (2..max_side, 2..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h).prop_map(move |v| grid(w, h, v))
    })
}

const REGION: BBox = BBox::new(-50, -50, 70, 70);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_text_round_trip(r in rects()) {
        let p = pattern(&r);
        prop_assert_eq!(parse_layout(&write_layout(&p)).unwrap(), p);
    }

    #[test]
    fn vectorize_inverts_rasterize_at_integer_pitch(r in rects()) {
        let g = rasterize(&pattern(&r), 1.0, REGION).unwrap();
        let back = vectorize(&g);
        for p in &back.polygons {
            prop_assert!(p.validate(0).is_ok());
        }
        prop_assert_eq!(rasterize(&back, 1.0, REGION).unwrap().values, g.values);
    }

    #[test]
    fn rasterize_is_translation_equivariant(r in rects(), dx in -30i64..30, dy in -30i64..30) {
        let p = pattern(&r);
        let a = rasterize(&p, 1.0, REGION).unwrap();
        let shifted = BBox::new(REGION.xmin + dx, REGION.ymin + dy, REGION.xmax + dx, REGION.ymax + dy);
        let b = rasterize(&p.translate(dx, dy), 1.0, shifted).unwrap();
        prop_assert_eq!(a.values, b.values);
    }

    #[test]
    fn raster_area_matches_polygon_area(x in -30i64..30, y in -30i64..30, w in 1i64..30, h in 1i64..30) {
        let p = pattern(&[(x, y, x + w, y + h)]);
        for px in [1.0, 2.0] {
            let g = rasterize(&p, px, REGION).unwrap();
            prop_assert_eq!(g.count_ones() as f64, (w * h) as f64 * px * px);
        }
    }

    #[test]
    fn convolution_routes_agree(g in real_grid(20), side in 0usize..4, seed in any::<u64>()) {
        let side = 2 * side + 1;
        let values: Vec<f64> = (0..side * side)
            .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407))) >> 40) as f64 / (1u64 << 24) as f64 - 0.5)
            .collect();
        let k = Kernel::new(side, values, 1.0).unwrap();
        let a = convolve_direct(&g, &k).unwrap();
        let b = convolve_fft(&g, &k).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn convolution_is_linear(g1 in real_grid(16), scale in -3.0f64..3.0) {
        let g2 = g1.with_values(g1.values.iter().map(|v| 1.0 - v * v).collect());
        let k = make_gaussian_kernel(1.5, 4.0, 1.0).unwrap();
        let mixed = g1.with_values(g1.values.iter().zip(&g2.values).map(|(a, b)| scale * a + b).collect());
        let lhs = convolve_direct(&mixed, &k).unwrap();
        let (c1, c2) = (convolve_direct(&g1, &k).unwrap(), convolve_direct(&g2, &k).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs.values[i] - (scale * c1.values[i] + c2.values[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_is_flipped_kernel(a in real_grid(12), seed in any::<u32>()) {
        // <K a, b> = <a, K^T b>
        let b = a.with_values(a.values.iter().enumerate().map(|(i, _)| ((i as u32 ^ seed) % 7) as f64).collect());
        let k = Kernel::new(3, vec![0.1, 0.5, 0.0, 0.2, 1.0, 0.3, 0.0, 0.4, 0.7], 1.0).unwrap();
        let ka = convolve_direct(&a, &k).unwrap();
        let ktb = convolve_direct(&b, &k.flipped()).unwrap();
        let lhs: f64 = ka.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.values.iter().zip(&ktb.values).map(|(x, y)| x * y).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn iip_lies_in_unit_interval(m in binary_grid(24), sigma in 0.5f64..4.0) {
        let k = make_iik(IikKind::Gaussian, sigma, 3.0 * sigma, 1.0).unwrap();
        let iip = compute_iip(&m, &k).unwrap();
        prop_assert!(iip.grid.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let expected_max = if m.count_ones() > 0 { 1.0 } else { 0.0 };
        prop_assert_eq!(iip.grid.max_value(), expected_max);
    }

    #[test]
    fn binning_is_monotone_and_consistent(a in 0.0f64..=1.0, b in 0.0f64..=1.0, classes in 2usize..200) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (cl, ch) = (bin_class(lo, classes).unwrap(), bin_class(hi, classes).unwrap());
        prop_assert!(cl <= ch);
        let mid = class_value(cl, classes).unwrap();
        prop_assert!((mid - lo).abs() <= 1.0 / classes as f64);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in binary_grid(12)) {
        let b = a.with_values(a.values.iter().rev().copied().collect());
        let (x, y) = (iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn chunk_plans_partition(n in 0usize..5000, workers in 1usize..64) {
        let plan = plan_chunks(n, workers).unwrap();
        prop_assert!(plan.len() <= workers);
        let mut next = 0;
        for c in &plan {
            prop_assert_eq!(c.start, next);
            prop_assert!(c.end > c.start);
            next = c.end;
        }
        prop_assert_eq!(next, n);
        let sizes: Vec<usize> = plan.iter().map(|c| c.len()).collect();
        if let (Some(max), Some(min)) = (sizes.iter().max(), sizes.iter().min()) {
            prop_assert!(max - min <= 1);
        }
    }

    #[test]
    fn sampler_matches_extract_and_compress(m in binary_grid(30), id in 2.0f64..9.0, factor in 1usize..4) {
        for (row, col) in [(Reducer::Mean, Reducer::Max), (Reducer::Max, Reducer::Mean), (Reducer::CenterWeighted, Reducer::Mean)] {
            let cfg = TilingConfig {
                interaction_distance: id,
                px_per_nm: 1.0,
                compression_factor: factor,
                row_reducer: row,
                col_reducer: col,
            };
            let s = WindowSampler::new(&m, &cfg).unwrap();
            for (x, y) in [(0, 0), (m.width - 1, m.height - 1), (m.width / 2, m.height / 3)] {
                let direct = compress_window(&extract_window(&m, (x, y), &cfg).unwrap(), &cfg).unwrap();
                prop_assert_eq!(s.sample(x, y).unwrap(), direct);
            }
        }
    }

    #[test]
    fn probabilities_form_a_simplex(seed in any::<u64>(), fill in 0.0f32..1.0, pool in prop::bool::ANY) {
        let arch = ArchDescriptor {
            input_side: 9,
            conv_blocks: vec![ConvBlock { filters: 4, stride: 2 }, ConvBlock { filters: 6, stride: 1 }],
            pool: if pool { Pool::Flatten } else { Pool::GlobalAverage },
            num_classes: 5,
        };
        let m = init_model(&arch, seed).unwrap();
        let img: Vec<f32> = (0..81).map(|i| (fill * i as f32).fract()).collect();
        let (probs, logits) = m.forward(&img).unwrap();
        prop_assert!(probs.iter().all(|&p| p >= 0.0));
        prop_assert!((probs.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(logits.iter().all(|l| l.is_finite()));
        prop_assert_eq!(m.predict(&img).unwrap(), argmax(&probs));
    }

    #[test]
    fn argmax_ignores_constant_shift(v in prop::collection::vec(-5.0f64..5.0, 2..30), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        // shifting can merge near-ties through rounding; only compare when the
        // top two are well separated
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(argmax(&v), argmax(&shifted));
    }
}

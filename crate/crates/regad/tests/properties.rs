use ndarray::{Array2, Array3};
use proptest::prelude::*;

use regad::dataio::{build_support_pool, AugmentationConfig, FlipAxis, ImageSample, Label, Split};
use regad::evalkit::{auroc, macro_average, EvalReport, RunResult};
use regad::featnet::{apply_affine, AffineParams, StnMode};
use regad::geometry::Affine2;
use regad::normest::fit_gaussian_grid;
use regad::scoring::realign_map;

fn scores_and_labels() -> impl Strategy<Value = (Vec<i32>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-20i32..20, n),
            prop::collection::vec(any::<bool>(), n).prop_map(|mut l| {
                l[0] = true;
                l[1] = false;
                l
            }),
        )
    })
}

fn features(n: usize, h: usize, w: usize, c: usize) -> impl Strategy<Value = Vec<Array3<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, h * w * c), n)
        .prop_map(move |v| v.into_iter().map(|x| Array3::from_shape_vec((h, w, c), x).unwrap()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_ignores_strictly_increasing_transforms((s, y) in scores_and_labels()) {
        let raw: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let cubed: Vec<f64> = s.iter().map(|&v| { let v = v as f64; v * v * v + 3.0 * v + 7.0 }).collect();
        prop_assert_eq!(auroc(&raw, &y).unwrap(), auroc(&cubed, &y).unwrap());
    }

    #[test]
    fn auroc_complement_law((s, y) in scores_and_labels()) {
        let raw: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let flipped: Vec<bool> = y.iter().map(|l| !l).collect();
        let total = auroc(&raw, &y).unwrap() + auroc(&raw, &flipped).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn macro_average_is_unweighted_mean_of_means(means in prop::collection::vec((0.0f64..1.0, 1usize..4), 1..6)) {
        let reports: Vec<EvalReport> = means
            .iter()
            .enumerate()
            .map(|(i, &(m, runs))| {
                let rr = (0..runs)
                    .map(|r| RunResult { seed: r as u64, image_auc: m, pixel_auc: None, adapt_seconds: 0.0 })
                    .collect();
                EvalReport::new(&format!("c{i}"), 2, rr)
            })
            .collect();
        let want = means.iter().map(|m| m.0).sum::<f64>() / means.len() as f64;
        prop_assert!((macro_average(&reports).0 - want).abs() < 1e-12);
    }

    #[test]
    fn grid_fit_is_order_invariant(feats in features(6, 2, 2, 3), rot in 0usize..6) {
        let a = fit_gaussian_grid(&feats, 0.01).unwrap();
        let mut shuffled = feats.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        let b = fit_gaussian_grid(&shuffled, 0.01).unwrap();
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in a.chol.iter().zip(&b.chol) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unregularized_distance_is_scale_invariant(feats in features(10, 1, 2, 3), scale in 0.1f64..10.0, probe in prop::collection::vec(-5.0f64..5.0, 3)) {
        let a = fit_gaussian_grid(&feats, 0.0).unwrap();
        let scaled: Vec<Array3<f64>> = feats.iter().map(|f| f * scale).collect();
        let b = fit_gaussian_grid(&scaled, 0.0).unwrap();
        let cov_a = a.covariance(0, 1);
        let cov_b = b.covariance(0, 1);
        for (x, y) in cov_a.iter().zip(cov_b.iter()) {
            prop_assert!((x * scale * scale - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
        let probe_scaled: Vec<f64> = probe.iter().map(|v| v * scale).collect();
        let da = a.mahalanobis(0, 1, &probe);
        let db = b.mahalanobis(0, 1, &probe_scaled);
        prop_assert!((da - db).abs() < 1e-6 * (1.0 + da));
    }

    #[test]
    fn larger_epsilon_never_increases_distance(feats in features(5, 1, 1, 4), e1 in 1e-4f64..1.0, extra in 0.0f64..1.0, probe in prop::collection::vec(-5.0f64..5.0, 4)) {
        let small = fit_gaussian_grid(&feats, e1).unwrap();
        let large = fit_gaussian_grid(&feats, e1 + extra).unwrap();
        prop_assert!(large.mahalanobis(0, 0, &probe) <= small.mahalanobis(0, 0, &probe) + 1e-9);
    }

    #[test]
    fn integer_shift_round_trip_is_exact_in_the_interior(dx in -3i32..=3, dy in -3i32..=3, seed in 0u64..1000) {
        let (h, w) = (12usize, 10usize);
        let map = Array3::from_shape_fn((2, h, w), |(c, y, x)| ((seed as usize + c * 31 + y * 7 + x * 13) % 17) as f64);
        let t = Affine2::translation(2.0 * dx as f64 / w as f64, 2.0 * dy as f64 / h as f64);
        let fwd = AffineParams::new(t, StnMode::Translation).unwrap();
        let back = AffineParams::new(t.inverse(1e-3).unwrap(), StnMode::Translation).unwrap();
        let round = apply_affine(&apply_affine(&map, &fwd).unwrap(), &back).unwrap();
        for c in 0..2 {
            for y in 3..h - 3 {
                for x in 3..w - 3 {
                    prop_assert!((round[[c, y, x]] - map[[c, y, x]]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn realignment_undoes_a_registration_shift(dx in -2i32..=2, seed in 0u64..1000) {
        let (h, w) = (8usize, 8usize);
        let scores = Array2::from_shape_fn((h, w), |(y, x)| ((seed as usize + y * 5 + x * 3) % 11) as f64);
        let t = Affine2::translation(2.0 * dx as f64 / w as f64, 0.0);
        let p = AffineParams::new(t, StnMode::Translation).unwrap();
        let id = AffineParams::identity(StnMode::Translation);
        let registered = apply_affine(&scores.clone().insert_axis(ndarray::Axis(0)), &p).unwrap();
        let registered = registered.index_axis(ndarray::Axis(0), 0).to_owned();
        let back = realign_map(&registered, &[p, id, id]).unwrap();
        let lo = dx.unsigned_abs() as usize;
        for y in 0..h {
            for x in lo..w - lo {
                prop_assert!((back[[y, x]] - scores[[y, x]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pool_size_is_the_cartesian_product(
        gray in any::<bool>(), flip in any::<bool>(), rotate in any::<bool>(), translate in any::<bool>(),
        n_rot in 0usize..4, n_tr in 0usize..3, n_flip in 0usize..=2, k in 1usize..3,
    ) {
        let cfg = AugmentationConfig {
            enable_gray: gray,
            enable_flip: flip,
            enable_translate: translate,
            enable_rotate: rotate,
            rotation_angles: (0..n_rot).map(|i| 20.0 * (i + 1) as f64).collect(),
            translation_offsets: (0..n_tr).map(|i| (0.0, 0.1 * (i + 1) as f64)).collect(),
            flip_axes: [FlipAxis::Horizontal, FlipAxis::Vertical][..n_flip].to_vec(),
        };
        let support: Vec<ImageSample> = (0..k)
            .map(|i| ImageSample {
                pixels: Array3::from_elem((6, 6, 3), 0.1 * i as f32),
                category: "t".into(),
                split: Split::Train,
                label: Label::Normal,
                mask: None,
                source_path: format!("{i}.png").into(),
                standardized: false,
            })
            .collect();
        let f = |on: bool, n: usize| if on { n + 1 } else { 1 };
        let want = k * f(gray, 1) * f(flip, n_flip) * f(rotate, n_rot) * f(translate, n_tr);
        let pool = build_support_pool(&support, &cfg);
        prop_assert_eq!(pool.len(), want);
        prop_assert!(pool[0].chain.is_identity());
    }
}

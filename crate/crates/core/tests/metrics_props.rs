//! Property tests of the metrics against independent brute-force oracles.

use proptest::prelude::*;
use uncertseg::engine::Tensor;
use uncertseg::metrics::{dice, linear_fit, pr_auc};
use uncertseg::postprocess::SegmentationMask;

fn mask(h: usize, bits: &[bool]) -> SegmentationMask {
    let w = bits.len() / h;
    SegmentationMask::from_binary(&Tensor::from_fn(&[h, w], |i| bits[i] as u8 as f32)).unwrap()
}

/// Average precision by enumerating thresholds from the highest distinct
/// score down, counting predictions with `score >= t` at each.
fn brute_force_ap(scores: &[f32], labels: &[bool]) -> f64 {
    let mut ts: Vec<f32> = scores.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in ts {
        let (mut tp, mut n) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                n += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        ap += (tp / pos - prev) * (tp / n);
        prev = tp / pos;
    }
    ap
}

fn sse(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    x.iter().zip(y).map(|(xi, yi)| (yi - a * xi - b).powi(2)).sum()
}

/// Minimises the squared error over (slope, intercept) by repeatedly
/// scanning a grid around the current best point and shrinking it.
fn grid_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    let mut half = 64.0;
    const N: i32 = 20;
    while half > 1e-10 {
        let step = half / N as f64;
        let mut best = (sse(x, y, a, b), a, b);
        for i in -N..=N {
            for j in -N..=N {
                let (ca, cb) = (a + i as f64 * step, b + j as f64 * step);
                let e = sse(x, y, ca, cb);
                if e < best.0 {
                    best = (e, ca, cb);
                }
            }
        }
        (a, b) = (best.1, best.2);
        half = 4.0 * step;
    }
    (a, b)
}

fn bits(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n)
}

proptest! {
    #[test]
    fn dice_is_symmetric_and_bounded((h, a, b) in (1usize..5, 1usize..5).prop_flat_map(|(h, w)| (Just(h), bits(h * w), bits(h * w)))) {
        let (ma, mb) = (mask(h, &a), mask(h, &b));
        let ab = dice(&ma, &mb).unwrap();
        prop_assert_eq!(ab, dice(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&ma, &ma).unwrap(), 1.0);
    }

    #[test]
    fn pr_auc_is_invariant_under_monotone_transforms(
        pairs in prop::collection::vec((0u8..8, any::<bool>()), 1..40),
        scale in 0.5f32..4.0,
    ) {
        let mut labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        labels[0] = true;
        let raw: Vec<f32> = pairs.iter().map(|p| p.0 as f32).collect();
        let cubed: Vec<f32> = raw.iter().map(|&k| scale * (k - 3.0).powi(3) + 1.0).collect();
        let squashed: Vec<f32> = raw.iter().map(|&k| k / (k + 1.0)).collect();
        let base = pr_auc(&raw, &labels).unwrap().1;
        prop_assert!((pr_auc(&cubed, &labels).unwrap().1 - base).abs() < 1e-12);
        prop_assert!((pr_auc(&squashed, &labels).unwrap().1 - base).abs() < 1e-12);
    }

    #[test]
    fn pr_auc_matches_threshold_enumeration(
        pairs in prop::collection::vec((0u8..5, any::<bool>()), 1..=12),
    ) {
        let mut labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        labels[pairs.len() - 1] = true;
        let scores: Vec<f32> = pairs.iter().map(|p| p.0 as f32 / 4.0).collect();
        let (curve, ap) = pr_auc(&scores, &labels).unwrap();
        prop_assert!((ap - brute_force_ap(&scores, &labels)).abs() <= 1e-9);
        prop_assert!(curve.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        prop_assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.precision)));
    }

    #[test]
    fn linear_fit_matches_grid_minimiser(
        x in prop::collection::vec(0.0f64..1.0, 10),
        y in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 0.2);
        let fit = linear_fit(&x, &y).unwrap();
        let (a, b) = grid_fit(&x, &y);
        prop_assert!((fit.slope - a).abs() <= 1e-6, "slope {} vs {}", fit.slope, a);
        prop_assert!((fit.intercept - b).abs() <= 1e-6, "intercept {} vs {}", fit.intercept, b);
        prop_assert!((0.0..=1.0).contains(&fit.r_squared));
    }
}

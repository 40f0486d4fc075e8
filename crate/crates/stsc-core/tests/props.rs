//! Property-based invariants for the numeric kernels and metrics.

use proptest::prelude::*;
use stsc_core::metrics::{confusion, miou, video_consistency, wiou};
use stsc_core::numerics::{dot, l2_normalize, log_sum_exp, softmax};
use stsc_core::pseudo::{harden, PseudoLabelConfig};
use stsc_core::synthetic::{generate_clip, sparsify_labels, ClipConfig};
use stsc_core::types::{LabelMap, IGNORE};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #[test]
    fn dot_is_symmetric_and_bilinear(a in finite_vec(6), b in finite_vec(6), c in finite_vec(6), s in -3.0..3.0f64) {
        prop_assert!((dot(&a, &b).unwrap() - dot(&b, &a).unwrap()).abs() < 1e-9);
        let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
        prop_assert!((dot(&scaled, &b).unwrap() - s * dot(&a, &b).unwrap()).abs() < 1e-7);
        let sum: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x + y).collect();
        prop_assert!((dot(&sum, &b).unwrap() - (dot(&a, &b).unwrap() + dot(&c, &b).unwrap())).abs() < 1e-7);
    }

    #[test]
    fn log_sum_exp_bounded_by_max(v in finite_vec(8)) {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = log_sum_exp(&v).unwrap();
        prop_assert!(lse >= max - 1e-12);
        prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(v in finite_vec(6), shift in -20.0..20.0f64) {
        let p = softmax(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_is_idempotent(v in finite_vec(5)) {
        let once = l2_normalize(&v, 1e-12);
        let twice = l2_normalize(&once, 1e-12);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let norm = dot(&once, &once).unwrap().sqrt();
        prop_assert!(norm <= 1.0 + 1e-12);
    }

    #[test]
    fn iou_metrics_are_class_permutation_invariant(
        pred in prop::collection::vec(0u8..3, 16),
        gt in prop::collection::vec(0u8..3, 16),
    ) {
        let perm = [1u8, 2, 0];
        let p = LabelMap::new(4, 4, pred.clone()).unwrap();
        let g = LabelMap::new(4, 4, gt.clone()).unwrap();
        let pp = LabelMap::new(4, 4, pred.iter().map(|&v| perm[usize::from(v)]).collect()).unwrap();
        let gp = LabelMap::new(4, 4, gt.iter().map(|&v| perm[usize::from(v)]).collect()).unwrap();
        let cm = confusion(&p, &g, 3, IGNORE).unwrap();
        let cm_p = confusion(&pp, &gp, 3, IGNORE).unwrap();
        prop_assert!((miou(&cm).unwrap() - miou(&cm_p).unwrap()).abs() < 1e-12);
        prop_assert!((wiou(&cm).unwrap() - wiou(&cm_p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval(
        pred in prop::collection::vec(prop::collection::vec(0u8..3, 16), 4),
        gt in prop::collection::vec(prop::collection::vec(0u8..3, 16), 4),
    ) {
        let preds: Vec<LabelMap> = pred.into_iter().map(|d| LabelMap::new(4, 4, d).unwrap()).collect();
        let gts: Vec<LabelMap> = gt.into_iter().map(|d| LabelMap::new(4, 4, d).unwrap()).collect();
        let mut cm = stsc_core::metrics::ConfusionMatrix::new(3);
        for (p, g) in preds.iter().zip(&gts) {
            cm.add(&confusion(p, g, 3, IGNORE).unwrap()).unwrap();
        }
        let m = miou(&cm).unwrap();
        let w = wiou(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((0.0..=1.0).contains(&w));
        let vc = video_consistency(&preds, &gts, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&vc));
    }

    #[test]
    fn pseudo_label_coverage_monotone_in_threshold(
        raw in prop::collection::vec(0.01..1.0f64, 3 * 8),
    ) {
        // Normalize the 3 values at each pixel to a distribution.
        let hw = 8;
        let mut data = raw.clone();
        for idx in 0..hw {
            let s: f64 = (0..3).map(|c| raw[c * hw + idx]).sum();
            for c in 0..3 {
                data[c * hw + idx] = raw[c * hw + idx] / s;
            }
        }
        let probs = stsc_core::numerics::DenseArray::new(vec![3, 2, 4], data).unwrap();
        let mut last = 1.0f64;
        for theta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let cfg = PseudoLabelConfig { threshold: theta, ..PseudoLabelConfig::default() };
            let (labels, stats) = harden(&probs, &cfg).unwrap();
            prop_assert!(stats.coverage() <= last + 1e-12);
            last = stats.coverage();
            // Any non-ignored label equals the plain argmax.
            let (argmax, _) = harden(&probs, &PseudoLabelConfig { threshold: 0.0, ..PseudoLabelConfig::default() }).unwrap();
            for (a, b) in labels.data().iter().zip(argmax.data()) {
                prop_assert!(*a == IGNORE || a == b);
            }
        }
    }

    #[test]
    fn sparsify_keeps_every_kth_label_unchanged(seed in 0u64..500, keep in 1usize..4) {
        let cfg = ClipConfig { height: 16, width: 16, num_frames: 6, background_change_frame: 3, seed, ..ClipConfig::default() };
        let full = generate_clip(&cfg, "p").unwrap();
        let sparse = sparsify_labels(&full, keep).unwrap();
        for (i, (orig, kept)) in full.labels.iter().zip(&sparse.labels).enumerate() {
            if i % keep == 0 {
                prop_assert_eq!(kept.as_ref(), orig.as_ref());
            } else {
                prop_assert!(kept.is_none());
            }
        }
        for (a, b) in full.frames.iter().zip(&sparse.frames) {
            prop_assert_eq!(a.data(), b.data());
        }
    }
}

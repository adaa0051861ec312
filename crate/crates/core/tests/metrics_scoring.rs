use clvae_core::evaluation::{evaluate_slices, point_adjust, Protocol};
use clvae_core::scoring::{assemble_scores, ClusterComponents};
use proptest::prelude::*;

fn counts(pred: &[bool], truth: &[bool]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// Marks whole true segments that contain at least one prediction.
fn adjust_by_segments(pred: &[bool], truth: &[bool]) -> Vec<bool> {
    let mut out = pred.to_vec();
    let mut i = 0;
    while i < truth.len() {
        if !truth[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < truth.len() && truth[i] {
            i += 1;
        }
        if pred[start..i].iter().any(|&p| p) {
            out[start..i].iter_mut().for_each(|v| *v = true);
        }
    }
    out
}

fn label_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..200).prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), prop::collection::vec(prop::bool::weighted(0.3), n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn confusion_counts_match_brute_force((pred, truth) in label_pair()) {
        let r = evaluate_slices(&pred, &truth, Protocol::Pointwise).unwrap();
        prop_assert_eq!((r.tp, r.fp, r.fn_, r.tn), counts(&pred, &truth));

        let adjusted = adjust_by_segments(&pred, &truth);
        prop_assert_eq!(point_adjust(&pred, &truth), adjusted.clone());
        let pa = evaluate_slices(&pred, &truth, Protocol::PointAdjust).unwrap();
        prop_assert_eq!((pa.tp, pa.fp, pa.fn_, pa.tn), counts(&adjusted, &truth));
        prop_assert!(pa.recall >= r.recall);

        let (tp, fp, fn_) = (r.tp as f64, r.fp as f64, r.fn_ as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        prop_assert!((r.precision - p).abs() < 1e-12);
        prop_assert!((r.recall - rc).abs() < 1e-12);
        prop_assert!((r.f1 - f1).abs() < 1e-12);
    }
}

fn components() -> impl Strategy<Value = Vec<ClusterComponents<f64>>> {
    (1usize..5, 1usize..60).prop_flat_map(|(k, n)| {
        prop::collection::vec(
            (prop::collection::vec(0.0f64..10.0, n), prop::collection::vec(0.0f64..5.0, n)),
            k,
        )
        .prop_map(|parts| {
            parts
                .into_iter()
                .enumerate()
                .map(|(j, (recon, kl))| ClusterComponents {
                    features: vec![format!("c{j}")],
                    offset: 13,
                    recon,
                    kl,
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn raw_score_is_weighted_sum(c in components(), l1 in 0.0f64..3.0, l2 in 0.0f64..3.0) {
        let s = assemble_scores(&c, l1, l2, false).unwrap();
        prop_assert_eq!(s.offset, 13);
        for i in 0..s.total.len() {
            let want: f64 = c.iter().map(|k| l1 * k.recon[i] + l2 * k.kl[i]).sum();
            prop_assert!((s.total[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn score_linear_in_weights(c in components(), l1 in 0.0f64..3.0, l2 in 0.0f64..3.0, a in 0.0f64..4.0) {
        let base = assemble_scores(&c, l1, l2, false).unwrap();
        let scaled = assemble_scores(&c, a * l1, a * l2, false).unwrap();
        for (x, y) in base.total.iter().zip(&scaled.total) {
            prop_assert!((a * x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn cluster_order_irrelevant(c in components(), normalize in any::<bool>()) {
        let a = assemble_scores(&c, 1.0, 1.0, normalize).unwrap();
        let mut rev = c.clone();
        rev.reverse();
        let b = assemble_scores(&rev, 1.0, 1.0, normalize).unwrap();
        for (x, y) in a.total.iter().zip(&b.total) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }
}

use clvae_core::frame::{read_csv, CsvSchema, TimeSeriesFrame};
use clvae_core::preprocess::{iqr_clean, iqr_clean_with_fences, iqr_fences, make_windows, Standardizer};
use proptest::prelude::*;

fn frame_strategy() -> impl Strategy<Value = TimeSeriesFrame<f64>> {
    (1usize..5, 4usize..40, -1000i64..1000, 1i64..5).prop_flat_map(|(f, n, t0, step)| {
        prop::collection::vec(-1e6f64..1e6, f * n).prop_map(move |data| {
            let ts = (0..n as i64).map(|i| t0 + i * step).collect();
            let names = (0..f).map(|j| format!("x{j}")).collect();
            TimeSeriesFrame::with_step(ts, step, names, data).unwrap()
        })
    })
}

/// Type-7 quantile written independently of the library.
fn quantile7(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

proptest! {
    #[test]
    fn csv_round_trip(frame in frame_strategy()) {
        let mut buf = Vec::new();
        frame.write_csv(&mut buf).unwrap();
        let back: TimeSeriesFrame<f64> = read_csv(buf.as_slice(), &CsvSchema::with_timestamp("timestamp")).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn slices_compose(frame in frame_strategy(), a in 0usize..40, b in 0usize..40) {
        let n = frame.n_rows();
        let (a, b) = (a % n, b % n);
        let (a, b) = (a.min(b), a.max(b) + 1);
        prop_assume!(b - a >= 2);
        let whole = frame.slice(a, b).unwrap();
        let mid = a + (b - a) / 2;
        let left = frame.slice(a, mid).unwrap();
        let right = frame.slice(mid, b).unwrap();
        prop_assert_eq!(left.n_rows() + right.n_rows(), whole.n_rows());
        for r in 0..whole.n_rows() {
            let row = if r < left.n_rows() { left.row(r) } else { right.row(r - left.n_rows()) };
            prop_assert_eq!(row, whole.row(r));
        }
        prop_assert_eq!(whole.timestamps()[0], frame.timestamps()[a]);
    }

    #[test]
    fn window_count_and_last_rows(frame in frame_strategy(), t in 1usize..10, s in 1usize..4) {
        let n = frame.n_rows();
        prop_assume!(t <= n);
        let w = make_windows(&frame, t, s).unwrap();
        prop_assert_eq!(w.n_windows(), (n - t) / s + 1);
        for d in 0..w.n_windows() {
            let last = w.last_row(d);
            prop_assert_eq!(last, d * s + t - 1);
            let f = frame.n_features();
            prop_assert_eq!(&w.window(d)[(t - 1) * f..], frame.row(last));
        }
    }

    #[test]
    fn iqr_fences_match_type7(frame in frame_strategy(), m in 0.5f64..3.0) {
        let fences = iqr_fences(&frame, m).unwrap();
        for (c, f) in fences.iter().enumerate() {
            let col = frame.column(c);
            let (q1, q3) = (quantile7(&col, 0.25), quantile7(&col, 0.75));
            let iqr = q3 - q1;
            prop_assert!((f.lower - (q1 - m * iqr)).abs() <= 1e-9 * (1.0 + f.lower.abs()));
            prop_assert!((f.upper - (q3 + m * iqr)).abs() <= 1e-9 * (1.0 + f.upper.abs()));
        }
    }

    #[test]
    fn cleaned_values_inside_fences(frame in frame_strategy()) {
        let (clean, report) = iqr_clean(&frame, 1.5).unwrap();
        for (c, f) in report.fences().iter().enumerate() {
            prop_assert!(clean.column(c).iter().all(|&v| f.contains(v)));
        }
        // Untouched rows keep their values.
        for (c, feat) in report.features.iter().enumerate() {
            for r in 0..frame.n_rows() {
                if !feat.replaced.contains(&r) {
                    prop_assert_eq!(clean.value(r, c), frame.value(r, c));
                }
            }
        }
    }

    #[test]
    fn cleaning_is_idempotent_under_fixed_fences(frame in frame_strategy()) {
        prop_assume!(frame.n_rows() >= 4);
        let (clean, report) = iqr_clean(&frame, 1.5).unwrap();
        clean.validate().unwrap();
        let (again, second) = iqr_clean_with_fences(&clean, &report.fences()).unwrap();
        prop_assert_eq!(second.total_replaced(), 0);
        prop_assert_eq!(again, clean);
    }

    #[test]
    fn standardize_inverts(frame in frame_strategy()) {
        let s = Standardizer::fit(&frame);
        let z = s.apply(&frame).unwrap();
        let back = s.invert(&z).unwrap();
        for (a, b) in back.data().iter().zip(frame.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn cleaning_clean_data_is_identity() {
    let cols: Vec<Vec<f64>> = (0..3)
        .map(|j| (0..200).map(|i| ((i * (j + 3)) as f64 * 0.1).sin()).collect())
        .collect();
    let frame = TimeSeriesFrame::from_columns(vec!["a".into(), "b".into(), "c".into()], &cols).unwrap();
    let (clean, report) = iqr_clean(&frame, 1.5).unwrap();
    assert_eq!(report.total_replaced(), 0);
    assert_eq!(clean, frame);
}

#[test]
fn standardized_moments() {
    let cols = vec![(0..500).map(|i| 3.0 + (i as f64 * 0.37).cos() * 7.0).collect::<Vec<f64>>()];
    let frame = TimeSeriesFrame::from_columns(vec!["a".into()], &cols).unwrap();
    let z = Standardizer::fit(&frame).apply(&frame).unwrap();
    let col = z.column(0);
    let mean = col.iter().sum::<f64>() / 500.0;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-12);
}

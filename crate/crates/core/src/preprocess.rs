//! Training-data repair (Tukey fences), standardization, and windowing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::scalar::{mean, quantile_sorted, variance, Scalar};

pub const DEFAULT_IQR_MULTIPLIER: f64 = 1.5;
pub const DEFAULT_WINDOW: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fences<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Fences<T> {
    pub fn contains(&self, v: T) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCleaning<T> {
    pub name: String,
    pub fences: Fences<T>,
    /// Row indices whose values were replaced.
    pub replaced: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport<T> {
    pub multiplier: T,
    pub features: Vec<FeatureCleaning<T>>,
}

impl<T: Scalar> CleaningReport<T> {
    pub fn total_replaced(&self) -> usize {
        self.features.iter().map(|f| f.replaced.len()).sum()
    }

    pub fn fences(&self) -> Vec<Fences<T>> {
        self.features.iter().map(|f| f.fences).collect()
    }
}

/// Per-feature `[Q1 − m·IQR, Q3 + m·IQR]` with interpolated quartiles.
pub fn iqr_fences<T: Scalar>(frame: &TimeSeriesFrame<T>, multiplier: T) -> Result<Vec<Fences<T>>> {
    if !(multiplier > T::zero()) {
        return Err(Error::Parameter(format!("IQR multiplier must be positive, got {multiplier}")));
    }
    if frame.n_rows() < 4 {
        return Err(Error::Cleaning(format!(
            "need at least 4 points per feature, got {}",
            frame.n_rows()
        )));
    }
    Ok((0..frame.n_features())
        .map(|c| {
            let mut col = frame.column(c);
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite frame"));
            let q1 = quantile_sorted(&col, T::lit(0.25));
            let q3 = quantile_sorted(&col, T::lit(0.75));
            let iqr = q3 - q1;
            Fences {
                lower: q1 - multiplier * iqr,
                upper: q3 + multiplier * iqr,
            }
        })
        .collect())
}

/// Flags values outside each feature's fences and replaces them with the
/// mean of the nearest in-fence value on each side (one side at the edges).
pub fn iqr_clean<T: Scalar>(frame: &TimeSeriesFrame<T>, multiplier: T) -> Result<(TimeSeriesFrame<T>, CleaningReport<T>)> {
    let fences = iqr_fences(frame, multiplier)?;
    let (cleaned, mut report) = iqr_clean_with_fences(frame, &fences)?;
    report.multiplier = multiplier;
    Ok((cleaned, report))
}

/// Cleaning against fixed, externally supplied fences.
pub fn iqr_clean_with_fences<T: Scalar>(
    frame: &TimeSeriesFrame<T>,
    fences: &[Fences<T>],
) -> Result<(TimeSeriesFrame<T>, CleaningReport<T>)> {
    if fences.len() != frame.n_features() {
        return Err(Error::Schema(format!(
            "{} fences for {} features",
            fences.len(),
            frame.n_features()
        )));
    }
    let n = frame.n_rows();
    let f = frame.n_features();
    let mut data = frame.data().to_vec();
    let mut features = Vec::with_capacity(f);
    for (c, fence) in fences.iter().enumerate() {
        let col = frame.column(c);
        let normal: Vec<bool> = col.iter().map(|&v| fence.contains(v)).collect();
        if !normal.iter().any(|&b| b) {
            return Err(Error::Cleaning(format!(
                "feature `{}` has no values inside its fences",
                frame.names()[c]
            )));
        }
        // Nearest in-fence index at or before / at or after every row.
        let mut left = vec![None; n];
        let mut last = None;
        for i in 0..n {
            if normal[i] {
                last = Some(i);
            }
            left[i] = last;
        }
        let mut right = vec![None; n];
        let mut next = None;
        for i in (0..n).rev() {
            if normal[i] {
                next = Some(i);
            }
            right[i] = next;
        }
        let mut replaced = Vec::new();
        for i in (0..n).filter(|&i| !normal[i]) {
            let v = match (left[i], right[i]) {
                (Some(l), Some(r)) => (col[l] + col[r]) / T::lit(2.0),
                (Some(l), None) => col[l],
                (None, Some(r)) => col[r],
                (None, None) => unreachable!("feature has in-fence values"),
            };
            data[i * f + c] = v;
            replaced.push(i);
        }
        features.push(FeatureCleaning {
            name: frame.names()[c].clone(),
            fences: *fence,
            replaced,
        });
    }
    let report = CleaningReport {
        multiplier: T::lit(DEFAULT_IQR_MULTIPLIER),
        features,
    };
    Ok((frame.with_data(data)?, report))
}

/// Per-feature z-scoring learned from training data (population σ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub names: Vec<String>,
    pub mean: Vec<T>,
    pub std: Vec<T>,
    /// Features whose σ was zero and replaced by 1.
    pub degenerate: Vec<bool>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(frame: &TimeSeriesFrame<T>) -> Self {
        let mut means = Vec::with_capacity(frame.n_features());
        let mut stds = Vec::with_capacity(frame.n_features());
        let mut degenerate = Vec::with_capacity(frame.n_features());
        for c in 0..frame.n_features() {
            let col = frame.column(c);
            let m = mean(&col);
            let s = variance(&col, m).sqrt();
            let tiny = T::epsilon() * (T::one() + m.abs());
            let bad = !(s > tiny);
            means.push(m);
            stds.push(if bad { T::one() } else { s });
            degenerate.push(bad);
        }
        Self {
            names: frame.names().to_vec(),
            mean: means,
            std: stds,
            degenerate,
        }
    }

    fn check(&self, frame: &TimeSeriesFrame<T>) -> Result<()> {
        if frame.names() != self.names.as_slice() {
            return Err(Error::Schema(format!(
                "standardizer fitted on {:?}, applied to {:?}",
                self.names,
                frame.names()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, frame: &TimeSeriesFrame<T>) -> Result<TimeSeriesFrame<T>> {
        self.check(frame)?;
        let f = frame.n_features();
        let data = frame
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % f]) / self.std[i % f])
            .collect();
        frame.with_data(data)
    }

    pub fn invert(&self, frame: &TimeSeriesFrame<T>) -> Result<TimeSeriesFrame<T>> {
        self.check(frame)?;
        let f = frame.n_features();
        let data = frame
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % f] + self.mean[i % f])
            .collect();
        frame.with_data(data)
    }
}

/// `D × T × F` stack of overlapping windows cut from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedTensor<T> {
    data: Vec<T>,
    n_windows: usize,
    window: usize,
    stride: usize,
    n_features: usize,
    origin: usize,
}

impl<T: Scalar> WindowedTensor<T> {
    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn window_len(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Source row of window 0, timestep 0.
    pub fn origin(&self) -> usize {
        self.origin
    }

    /// Window `d` as a row-major `T × F` slice.
    pub fn window(&self, d: usize) -> &[T] {
        let len = self.window * self.n_features;
        &self.data[d * len..(d + 1) * len]
    }

    /// Source row index of window `d`'s last timestep.
    pub fn last_row(&self, d: usize) -> usize {
        self.origin + d * self.stride + self.window - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.window * self.n_features)
    }
}

pub fn make_windows<T: Scalar>(frame: &TimeSeriesFrame<T>, window: usize, stride: usize) -> Result<WindowedTensor<T>> {
    if window == 0 || stride == 0 {
        return Err(Error::Parameter(format!(
            "window ({window}) and stride ({stride}) must be positive"
        )));
    }
    let n = frame.n_rows();
    if n < window {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot fill a window of {window}"
        )));
    }
    let f = frame.n_features();
    let n_windows = (n - window) / stride + 1;
    let mut data = Vec::with_capacity(n_windows * window * f);
    let src = frame.data();
    for d in 0..n_windows {
        let start = d * stride;
        data.extend_from_slice(&src[start * f..(start + window) * f]);
    }
    Ok(WindowedTensor {
        data,
        n_windows,
        window,
        stride,
        n_features: f,
        origin: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(cols: &[Vec<f64>]) -> TimeSeriesFrame<f64> {
        let names = (0..cols.len()).map(|i| format!("x{i}")).collect();
        TimeSeriesFrame::from_columns(names, cols).unwrap()
    }

    #[test]
    fn right_tail_outlier_uses_left_neighbor() {
        let f = frame(&[vec![1.0, 2.0, 3.0, 4.0, 100.0]]);
        let (clean, report) = iqr_clean(&f, 1.5).unwrap();
        assert_eq!(report.features[0].fences, Fences { lower: -1.0, upper: 7.0 });
        assert_eq!(report.features[0].replaced, vec![4]);
        assert_eq!(clean.column(0), vec![1.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn left_edge_outlier_uses_right_neighbor() {
        let f = frame(&[vec![100.0, 2.0, 3.0, 4.0, 5.0]]);
        let (clean, _) = iqr_clean(&f, 1.5).unwrap();
        assert_eq!(clean.column(0), vec![2.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn interior_outlier_averages_both_sides() {
        let f = frame(&[vec![1.0, 2.0, 50.0, 3.0, 2.0, 1.0, 2.0]]);
        let (clean, report) = iqr_clean(&f, 1.5).unwrap();
        assert_eq!(report.total_replaced(), 1);
        assert_eq!(clean.value(2, 0), 2.5);
    }

    #[test]
    fn constant_series_untouched() {
        let f = frame(&[vec![5.0; 5]]);
        let (clean, report) = iqr_clean(&f, 1.5).unwrap();
        assert_eq!(report.total_replaced(), 0);
        assert_eq!(clean, f);
    }

    #[test]
    fn cleaning_errors() {
        let short = frame(&[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(iqr_clean(&short, 1.5), Err(Error::Cleaning(_))));
        let f = frame(&[vec![1.0, 2.0, 3.0, 4.0]]);
        assert!(matches!(iqr_clean(&f, 0.0), Err(Error::Parameter(_))));
        let impossible = [Fences { lower: 10.0, upper: 11.0 }];
        assert!(matches!(iqr_clean_with_fences(&f, &impossible), Err(Error::Cleaning(_))));
    }

    #[test]
    fn standardizer_formulas() {
        let f = frame(&[vec![1.0, 3.0], vec![0.0, 0.0]]);
        let s = Standardizer::fit(&f);
        assert_eq!(s.mean, vec![2.0, 0.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.degenerate, vec![false, true]);
        let z = s.apply(&f).unwrap();
        assert_eq!(z.column(0), vec![-1.0, 1.0]);
        assert_eq!(z.column(1), vec![0.0, 0.0]);
    }

    #[test]
    fn standardizer_schema_check() {
        let s = Standardizer::fit(&frame(&[vec![1.0, 2.0]]));
        let other = TimeSeriesFrame::from_columns(vec!["y".into()], &[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(s.apply(&other), Err(Error::Schema(_))));
    }

    #[test]
    fn window_counts() {
        let f = frame(&[(0..30).map(f64::from).collect()]);
        assert_eq!(make_windows(&f, 14, 1).unwrap().n_windows(), 17);
        let f14 = f.slice(0, 14).unwrap();
        let w = make_windows(&f14, 14, 1).unwrap();
        assert_eq!(w.n_windows(), 1);
        assert_eq!(w.window(0), f14.data());
        let f20 = f.slice(0, 20).unwrap();
        assert_eq!(make_windows(&f20, 14, 7).unwrap().n_windows(), 1);
        assert!(matches!(make_windows(&f.slice(0, 5).unwrap(), 14, 1), Err(Error::InsufficientData(_))));
    }
}

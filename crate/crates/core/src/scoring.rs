//! Per-timestep anomaly scores assembled from per-cluster model outputs.
//!
//! Each cluster contributes `λ1·recon + λ2·kl` at every scored timestep,
//! optionally robust-normalized over the scoring period, and the total is the
//! sum over clusters. Stride-1 windows are aligned on their last row, so the
//! first `T−1` timesteps carry no score.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::preprocess::make_windows;
use crate::scalar::{median, Scalar};
use crate::vae::LstmVaeModel;

/// Consistency constant turning a MAD into a normal-equivalent σ.
pub const MAD_SCALE: f64 = 1.4826;

/// Raw model outputs for one cluster over the scored timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComponents<T> {
    pub features: Vec<String>,
    /// Source index of the first scored timestep.
    pub offset: usize,
    pub recon: Vec<T>,
    pub kl: Vec<T>,
}

impl<T> ClusterComponents<T> {
    pub fn len(&self) -> usize {
        self.recon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recon.is_empty()
    }
}

/// Location/scale used to normalize one cluster's weighted component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats<T> {
    pub median: T,
    pub scale: T,
}

impl<T: Scalar> NormStats<T> {
    /// Median and `1.4826·MAD`, floored away from zero.
    pub fn robust(values: &[T]) -> Self {
        let med = median(values);
        let dev: Vec<T> = values.iter().map(|&v| (v - med).abs()).collect();
        let floor = T::lit(1e-9) * (med.abs() + T::one());
        Self {
            median: med,
            scale: (T::lit(MAD_SCALE) * median(&dev)).max(floor),
        }
    }

    pub fn apply(&self, v: T) -> T {
        (v - self.median) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore<T> {
    pub features: Vec<String>,
    pub recon: Vec<T>,
    pub kl: Vec<T>,
    /// Weighted (and, if enabled, normalized) contribution to the total.
    pub component: Vec<T>,
    pub stats: Option<NormStats<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries<T> {
    /// Length of the absent prefix.
    pub offset: usize,
    /// Scores for source timesteps `offset..offset + total.len()`.
    pub total: Vec<T>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub normalized: bool,
    pub clusters: Vec<ClusterScore<T>>,
}

impl<T: Scalar> ScoreSeries<T> {
    pub fn len(&self) -> usize {
        self.offset + self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score of source timestep `i`, `None` inside the absent prefix.
    pub fn get(&self, i: usize) -> Option<T> {
        i.checked_sub(self.offset).and_then(|j| self.total.get(j).copied())
    }

    pub fn stats(&self) -> Option<Vec<NormStats<T>>> {
        self.clusters.iter().map(|c| c.stats).collect()
    }

    /// Trailing moving average of the total over `m` scored timesteps.
    pub fn smoothed(&self, m: usize) -> Vec<T> {
        if m <= 1 {
            return self.total.clone();
        }
        let mut out = Vec::with_capacity(self.total.len());
        let mut acc = T::zero();
        for (i, &v) in self.total.iter().enumerate() {
            acc = acc + v;
            if i >= m {
                acc = acc - self.total[i - m];
            }
            out.push(acc / T::count((i + 1).min(m)));
        }
        out
    }

    /// `timestamp,total,cluster_0,…` with blank cells for absent scores.
    pub fn write_csv<W: Write>(&self, timestamps: &[i64], writer: W) -> Result<()> {
        if timestamps.len() != self.len() {
            return Err(Error::Alignment(format!(
                "{} timestamps for {} score rows",
                timestamps.len(),
                self.len()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string(), "total".to_string()];
        header.extend((0..self.clusters.len()).map(|j| format!("cluster_{j}")));
        w.write_record(&header)?;
        for (i, ts) in timestamps.iter().enumerate() {
            let mut rec = vec![ts.to_string()];
            match i.checked_sub(self.offset) {
                Some(j) => {
                    rec.push(self.total[j].to_string());
                    rec.extend(self.clusters.iter().map(|c| c.component[j].to_string()));
                }
                None => rec.extend(std::iter::repeat(String::new()).take(self.clusters.len() + 1)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_inputs<T: Scalar>(components: &[ClusterComponents<T>], lambda1: f64, lambda2: f64) -> Result<()> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) || (lambda1 == 0.0 && lambda2 == 0.0) {
        return Err(Error::Parameter(format!(
            "weights ({lambda1}, {lambda2}) must be non-negative and not both zero"
        )));
    }
    let first = components
        .first()
        .ok_or_else(|| Error::InsufficientData("no cluster outputs to score".into()))?;
    for (j, c) in components.iter().enumerate() {
        if c.offset != first.offset || c.len() != first.len() || c.kl.len() != c.recon.len() {
            return Err(Error::Alignment(format!(
                "cluster {j} covers {}..{}, cluster 0 covers {}..{}",
                c.offset,
                c.offset + c.len(),
                first.offset,
                first.offset + first.len()
            )));
        }
    }
    Ok(())
}

fn weighted<T: Scalar>(c: &ClusterComponents<T>, l1: T, l2: T) -> Vec<T> {
    c.recon.iter().zip(&c.kl).map(|(&r, &k)| l1 * r + l2 * k).collect()
}

fn build<T: Scalar>(
    components: &[ClusterComponents<T>],
    lambda1: f64,
    lambda2: f64,
    normalized: bool,
    stats: Vec<Option<NormStats<T>>>,
) -> ScoreSeries<T> {
    let (l1, l2) = (T::lit(lambda1), T::lit(lambda2));
    let n = components[0].len();
    let mut total = vec![T::zero(); n];
    let clusters = components
        .iter()
        .zip(stats)
        .map(|(c, st)| {
            let mut comp = weighted(c, l1, l2);
            if let Some(s) = st {
                comp.iter_mut().for_each(|v| *v = s.apply(*v));
            }
            for (t, &v) in total.iter_mut().zip(&comp) {
                *t = *t + v;
            }
            ClusterScore {
                features: c.features.clone(),
                recon: c.recon.clone(),
                kl: c.kl.clone(),
                component: comp,
                stats: st,
            }
        })
        .collect();
    ScoreSeries {
        offset: components[0].offset,
        total,
        lambda1,
        lambda2,
        normalized,
        clusters,
    }
}

/// Combines per-cluster outputs into one score per timestep.
pub fn assemble_scores<T: Scalar>(
    components: &[ClusterComponents<T>],
    lambda1: f64,
    lambda2: f64,
    normalize: bool,
) -> Result<ScoreSeries<T>> {
    check_inputs(components, lambda1, lambda2)?;
    let (l1, l2) = (T::lit(lambda1), T::lit(lambda2));
    let stats = components
        .iter()
        .map(|c| normalize.then(|| NormStats::robust(&weighted(c, l1, l2))))
        .collect();
    Ok(build(components, lambda1, lambda2, normalize, stats))
}

/// As [`assemble_scores`], normalizing with previously computed statistics
/// (one per cluster) instead of statistics of `components` themselves.
pub fn assemble_scores_with_stats<T: Scalar>(
    components: &[ClusterComponents<T>],
    lambda1: f64,
    lambda2: f64,
    stats: &[NormStats<T>],
) -> Result<ScoreSeries<T>> {
    check_inputs(components, lambda1, lambda2)?;
    if stats.len() != components.len() {
        return Err(Error::Alignment(format!(
            "{} normalization entries for {} clusters",
            stats.len(),
            components.len()
        )));
    }
    Ok(build(components, lambda1, lambda2, true, stats.iter().copied().map(Some).collect()))
}

/// Column indices of `model`'s features in `frame`.
pub fn model_columns<T: Scalar>(model: &LstmVaeModel<T>, frame: &TimeSeriesFrame<T>) -> Result<Vec<usize>> {
    model
        .features
        .iter()
        .map(|name| {
            frame
                .feature_index(name)
                .ok_or_else(|| Error::Schema(format!("frame has no feature `{name}`")))
        })
        .collect()
}

/// Scores every stride-1 window of `frame` with `model`, over the model's own
/// features.
pub fn score_cluster<T: Scalar>(
    model: &LstmVaeModel<T>,
    frame: &TimeSeriesFrame<T>,
    window: usize,
) -> Result<ClusterComponents<T>> {
    let sub = frame.select(&model_columns(model, frame)?)?;
    let tensor = make_windows(&sub, window, 1)?;
    let pairs = (0..tensor.n_windows())
        .into_par_iter()
        .map(|d| model.score_window(tensor.window(d)))
        .collect::<Result<Vec<_>>>()?;
    let (recon, kl) = pairs.into_iter().unzip();
    Ok(ClusterComponents {
        features: model.features.clone(),
        offset: window - 1,
        recon,
        kl,
    })
}

pub fn score_frame<T: Scalar>(
    models: &[LstmVaeModel<T>],
    frame: &TimeSeriesFrame<T>,
    window: usize,
) -> Result<Vec<ClusterComponents<T>>> {
    models.iter().map(|m| score_cluster(m, frame, window)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(recon: Vec<f64>, kl: Vec<f64>) -> ClusterComponents<f64> {
        ClusterComponents {
            features: vec!["a".into()],
            offset: 2,
            recon,
            kl,
        }
    }

    #[test]
    fn weighting_identity() {
        let c = comp(vec![0.1, 0.4, 0.2], vec![9.0, 9.0, 9.0]);
        let s = assemble_scores(&[c.clone()], 1.0, 0.0, false).unwrap();
        assert_eq!(s.total, c.recon);
        assert_eq!(s.get(1), None);
        assert_eq!(s.get(3), Some(0.4));
    }

    #[test]
    fn direct_evaluation() {
        let s = assemble_scores(&[comp(vec![0.3], vec![0.2])], 1.0, 1.0, false).unwrap();
        assert!((s.total[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn additivity() {
        let c = comp(vec![0.1, 0.4, 0.2], vec![0.5, 0.0, 1.0]);
        let one = assemble_scores(&[c.clone()], 1.0, 1.0, false).unwrap();
        let two = assemble_scores(&[c.clone(), c], 1.0, 1.0, false).unwrap();
        for (a, b) in one.total.iter().zip(&two.total) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn misaligned_clusters() {
        let a = comp(vec![0.1, 0.2], vec![0.0, 0.0]);
        let mut b = a.clone();
        b.offset = 3;
        assert!(matches!(assemble_scores(&[a, b], 1.0, 1.0, false), Err(Error::Alignment(_))));
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(assemble_scores(&[comp(vec![0.1], vec![0.1])], 0.0, 0.0, false).is_err());
    }

    #[test]
    fn normalized_breakdown_sums() {
        let a = comp(vec![0.1, 0.4, 0.2, 3.0], vec![0.5, 0.0, 1.0, 0.2]);
        let b = comp(vec![5.0, 1.0, 2.0, 2.5], vec![0.1, 0.1, 0.3, 0.0]);
        let s = assemble_scores(&[a, b], 1.0, 0.5, true).unwrap();
        for i in 0..4 {
            let sum: f64 = s.clusters.iter().map(|c| c.component[i]).sum();
            assert!((sum - s.total[i]).abs() < 1e-9);
        }
        let again = assemble_scores_with_stats(
            &[s.clusters[0].clone(), s.clusters[1].clone()]
                .map(|c| ClusterComponents {
                    features: c.features,
                    offset: 2,
                    recon: c.recon,
                    kl: c.kl,
                }),
            1.0,
            0.5,
            &s.stats().unwrap(),
        )
        .unwrap();
        assert_eq!(again.total, s.total);
    }

    #[test]
    fn smoothing() {
        let s = assemble_scores(&[comp(vec![1.0, 3.0, 5.0], vec![0.0; 3])], 1.0, 0.0, false).unwrap();
        assert_eq!(s.smoothed(1), vec![1.0, 3.0, 5.0]);
        assert_eq!(s.smoothed(2), vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn csv_marks_absent_prefix() {
        let s = assemble_scores(&[comp(vec![0.5], vec![0.0])], 1.0, 0.0, false).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&[10, 11, 12], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "timestamp,total,cluster_0\n10,,\n11,,\n12,0.5,0.5\n"
        );
    }
}

//! Feature-perturbation importance of detected anomalies.
//!
//! One feature at a time is disturbed over the evaluation period and its
//! cluster's windows are rescored. The importance is the gap between the mean
//! score change at anomalous timesteps and the mean change at normal ones,
//! averaged over repeats and then taken in absolute value. Destroying any feature's
//! structure moves the score everywhere; only a feature that carries the
//! anomaly moves it differently where the anomaly is. Perturbed components are
//! normalized with the baseline statistics so only the perturbation moves the
//! score.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::scalar::Scalar;
use crate::scoring::{model_columns, ScoreSeries};
use crate::vae::LstmVaeModel;

pub const DEFAULT_REPEATS: usize = 5;
/// Normal timesteps sampled (evenly) to estimate the reference change.
pub const NORMAL_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Shuffle the feature's values within the period.
    Permute,
    /// Add `N(0, σ²)` noise (standardized units).
    Gaussian { sigma: f64 },
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Permute
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionOptions {
    pub policy: Policy,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self {
            policy: Policy::Permute,
            repeats: DEFAULT_REPEATS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    /// Descending by importance, ties broken by name.
    pub entries: Vec<Importance>,
    /// First and last timestamp of the evaluation period.
    pub period: (i64, i64),
    pub n_anomalous: usize,
    pub policy: Policy,
    pub repeats: usize,
    pub seed: u64,
}

impl ImportanceRanking {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.importance)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.importance).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "feature", "importance"])?;
        for (r, e) in self.entries.iter().enumerate() {
            w.write_record([(r + 1).to_string(), e.feature.clone(), e.importance.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// FNV-1a, used to give each feature its own random stream independent of
/// column order.
fn name_stream(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn perturb<T: Scalar>(values: &[T], policy: Policy, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
    match policy {
        Policy::Permute => {
            let mut v = values.to_vec();
            v.shuffle(rng);
            Ok(v)
        }
        Policy::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma)
                .map_err(|_| Error::Parameter(format!("perturbation σ = {sigma} is invalid")))?;
            Ok(values.iter().map(|&x| x + T::lit(normal.sample(rng))).collect())
        }
    }
}

/// Ranks every feature of `frame` by how much disturbing it moves the score at
/// anomalous timesteps. `baseline` must be the unperturbed score of `frame`
/// under `models` and `labels` the thresholded labels, both frame-aligned.
pub fn perturb_importance<T: Scalar>(
    models: &[LstmVaeModel<T>],
    frame: &TimeSeriesFrame<T>,
    baseline: &ScoreSeries<T>,
    labels: &[bool],
    window: usize,
    opts: &AttributionOptions,
) -> Result<ImportanceRanking> {
    if opts.repeats == 0 {
        return Err(Error::Parameter("at least one perturbation repeat is required".into()));
    }
    if let Policy::Gaussian { sigma } = opts.policy {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("perturbation σ = {sigma} must be positive")));
        }
    }
    let n = frame.n_rows();
    if baseline.len() != n || labels.len() != n || baseline.clusters.len() != models.len() {
        return Err(Error::Alignment(format!(
            "frame has {n} rows, scores {} rows over {} clusters, labels {} rows, {} models",
            baseline.len(),
            baseline.clusters.len(),
            labels.len(),
            models.len()
        )));
    }
    if window == 0 || baseline.offset + 1 != window {
        return Err(Error::Alignment(format!(
            "scores start at row {} but window is {window}",
            baseline.offset
        )));
    }
    let anomalous: Vec<usize> = (baseline.offset..n).filter(|&i| labels[i]).collect();
    if anomalous.is_empty() {
        return Err(Error::Attribution(
            "no anomalous timesteps in the evaluation period; widen the period".into(),
        ));
    }
    let normal_all: Vec<usize> = (baseline.offset..n).filter(|&i| !labels[i]).collect();
    let stride = normal_all.len().div_ceil(NORMAL_SAMPLE).max(1);
    let normal: Vec<usize> = normal_all.iter().copied().step_by(stride).collect();
    let columns = models
        .iter()
        .map(|m| model_columns(m, frame))
        .collect::<Result<Vec<_>>>()?;
    let (l1, l2) = (T::lit(baseline.lambda1), T::lit(baseline.lambda2));

    let scores = (0..frame.n_features())
        .into_par_iter()
        .map(|fi| -> Result<f64> {
            let name = &frame.names()[fi];
            let (c, pos) = columns
                .iter()
                .enumerate()
                .find_map(|(c, cols)| cols.iter().position(|&k| k == fi).map(|p| (c, p)))
                .ok_or_else(|| Error::Attribution(format!("feature `{name}` belongs to no cluster")))?;
            let cols = &columns[c];
            let fc = cols.len();
            let original = frame.column(fi);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(name_stream(name));
            let mut buf = vec![T::zero(); window * fc];
            let mut delta = |perturbed: &[T], at: &[usize]| -> Result<f64> {
                let mut sum = 0.0;
                for &i in at {
                    let first = i + 1 - window;
                    for r in 0..window {
                        let row = frame.row(first + r);
                        for (k, &col) in cols.iter().enumerate() {
                            buf[r * fc + k] = if k == pos { perturbed[first + r] } else { row[col] };
                        }
                    }
                    let (rec, kl) = models[c].score_window(&buf)?;
                    let mut comp = l1 * rec + l2 * kl;
                    if let Some(s) = baseline.clusters[c].stats {
                        comp = s.apply(comp);
                    }
                    sum += (comp - baseline.clusters[c].component[i - baseline.offset]).as_f64();
                }
                Ok(sum / at.len().max(1) as f64)
            };
            let mut total = 0.0;
            for _ in 0..opts.repeats {
                let perturbed = perturb(&original, opts.policy, &mut rng)?;
                let anom = delta(&perturbed, &anomalous)?;
                let norm = if normal.is_empty() { 0.0 } else { delta(&perturbed, &normal)? };
                total += anom - norm;
            }
            let v = (total / opts.repeats as f64).abs();
            if !v.is_finite() {
                return Err(Error::Numeric(format!("importance of `{name}` is not finite")));
            }
            Ok(v)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut entries: Vec<Importance> = frame
        .names()
        .iter()
        .zip(scores)
        .map(|(f, importance)| Importance {
            feature: f.clone(),
            importance,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.importance
            .partial_cmp(&a.importance)
            .expect("finite importances")
            .then_with(|| a.feature.cmp(&b.feature))
    });
    let ts = frame.timestamps();
    Ok(ImportanceRanking {
        entries,
        period: (ts[0], ts[n - 1]),
        n_anomalous: anomalous.len(),
        policy: opts.policy,
        repeats: opts.repeats,
        seed: opts.seed,
    })
}

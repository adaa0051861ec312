//! Peaks-over-threshold thresholding.
//!
//! Excesses over a high empirical quantile are modelled with a Generalized
//! Pareto Distribution fitted by Grimshaw's one-dimensional likelihood
//! reduction; the fitted tail is then extrapolated to the risk level `q`.
//! [`dynamic_threshold`] repeats the fit over half-overlapping windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{mean, quantile_sorted, variance, Scalar};

pub const DEFAULT_RISK: f64 = 1e-3;
pub const DEFAULT_INIT_QUANTILE: f64 = 0.98;
pub const DEFAULT_MIN_EXCESS: usize = 10;

/// Below this |ξ| the exponential-tail branch of the quantile is used.
const XI_ZERO: f64 = 1e-8;
const GRID: usize = 400;
const BISECT_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Likelihood,
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams<T> {
    pub xi: T,
    pub sigma: T,
    pub method: FitMethod,
    /// Excesses had (numerically) no spread.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit<T> {
    pub xi: T,
    pub sigma: T,
    /// Initial threshold the excesses were measured from.
    pub t: T,
    pub n_excess: usize,
    pub n: usize,
    pub method: FitMethod,
    pub degenerate: bool,
}

/// Grimshaw's `u(x) = mean 1/(1 + x·y)` and `v(x) = 1 + mean ln(1 + x·y)`,
/// with `x = ξ/σ`.
fn u_v<T: Scalar>(y: &[T], x: T) -> (T, T) {
    let n = T::count(y.len());
    let mut su = T::zero();
    let mut sv = T::zero();
    for &yi in y {
        let s = T::one() + x * yi;
        su = su + T::one() / s;
        sv = sv + s.ln();
    }
    (su / n, T::one() + sv / n)
}

fn w<T: Scalar>(y: &[T], x: T) -> T {
    let (u, v) = u_v(y, x);
    u * v - T::one()
}

pub fn gpd_log_likelihood<T: Scalar>(y: &[T], xi: T, sigma: T) -> T {
    let n = T::count(y.len());
    if sigma <= T::zero() {
        return T::neg_infinity();
    }
    if xi.abs() < T::lit(XI_ZERO) {
        return -n * sigma.ln() - y.iter().copied().sum::<T>() / sigma;
    }
    let mut s = T::zero();
    for &yi in y {
        let a = T::one() + xi * yi / sigma;
        if a <= T::zero() {
            return T::neg_infinity();
        }
        s = s + a.ln();
    }
    -n * sigma.ln() - (T::one() + T::one() / xi) * s
}

fn bisect<T: Scalar>(y: &[T], mut a: T, mut b: T) -> T {
    let mut wa = w(y, a);
    for _ in 0..BISECT_ITERS {
        let m = (a + b) * T::lit(0.5);
        if m == a || m == b {
            break;
        }
        let wm = w(y, m);
        if (wm < T::zero()) == (wa < T::zero()) {
            a = m;
            wa = wm;
        } else {
            b = m;
        }
    }
    (a + b) * T::lit(0.5)
}

/// Roots of `w` bracketed by consecutive points of an increasing grid.
fn roots<T: Scalar>(y: &[T], grid: &[T]) -> Vec<T> {
    let mut out = Vec::new();
    let mut prev: Option<(T, T)> = None;
    for &x in grid {
        let wx = w(y, x);
        if !wx.is_finite() {
            prev = None;
            continue;
        }
        if let Some((px, pw)) = prev {
            if wx == T::zero() {
                out.push(x);
            } else if (pw < T::zero()) != (wx < T::zero()) && pw != T::zero() {
                out.push(bisect(y, px, x));
            }
        }
        prev = Some((x, wx));
    }
    out
}

fn geometric<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let ratio = (hi / lo).ln() / T::count(n - 1);
    (0..n).map(|k| lo * (ratio * T::count(k)).exp()).collect()
}

fn moments<T: Scalar>(y: &[T]) -> GpdParams<T> {
    let m = mean(y);
    let floor = T::lit(1e-12) * (m * m).max(T::min_positive_value());
    let raw = variance(y, m);
    let degenerate = raw <= floor;
    let var = raw.max(floor);
    let half = T::lit(0.5);
    let mut xi = half * (T::one() - m * m / var);
    let mut sigma = half * m * (m * m / var + T::one());
    if xi < -T::one() {
        xi = -T::one();
        sigma = m * (T::one() - xi);
    }
    let y_max = y.iter().copied().fold(T::zero(), T::max);
    if xi < T::zero() {
        sigma = sigma.max(-xi * y_max);
    }
    GpdParams {
        xi,
        sigma,
        method: FitMethod::Moments,
        degenerate,
    }
}

/// Maximum-likelihood GPD fit of positive excesses. Falls back to the method
/// of moments when no root of the Grimshaw equation can be bracketed.
pub fn fit_gpd<T: Scalar>(excesses: &[T], min_excess: usize) -> Result<GpdParams<T>> {
    if excesses.len() < min_excess.max(1) {
        return Err(Error::InsufficientExcess {
            found: excesses.len(),
            required: min_excess,
        });
    }
    if let Some(bad) = excesses.iter().find(|y| !(**y > T::zero()) || !y.is_finite()) {
        return Err(Error::Domain(format!("excess {bad} is not a positive finite value")));
    }
    let y = excesses;
    let y_min = y.iter().copied().fold(T::infinity(), T::min);
    let y_max = y.iter().copied().fold(T::zero(), T::max);
    let y_mean = mean(y);

    let eps = T::lit(1e-6) / y_mean;
    let lower = T::one() / y_max;
    let upper = T::lit(2.0) * (y_mean - y_min) / (y_min * y_min);

    let mut candidates = Vec::new();
    if lower > eps {
        let mut grid: Vec<T> = geometric(eps, lower * (T::one() - T::lit(1e-10)), GRID)
            .into_iter()
            .chain((1..=9).map(|k| lower * (T::one() - T::lit(10f64.powi(-k)))))
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let neg: Vec<T> = grid.into_iter().map(|x| -x).collect();
        candidates.extend(roots(y, &neg));
    }
    if upper > eps {
        candidates.extend(roots(y, &geometric(eps, upper, GRID)));
    }

    if candidates.is_empty() {
        return Ok(moments(y));
    }
    let mut best = GpdParams {
        xi: T::zero(),
        sigma: y_mean,
        method: FitMethod::Likelihood,
        degenerate: false,
    };
    let mut best_ll = gpd_log_likelihood(y, T::zero(), y_mean);
    for x in candidates {
        let (_, v) = u_v(y, x);
        let xi = v - T::one();
        let sigma = xi / x;
        if !(sigma > T::zero()) || !sigma.is_finite() {
            continue;
        }
        let ll = gpd_log_likelihood(y, xi, sigma);
        if ll > best_ll {
            best_ll = ll;
            best.xi = xi;
            best.sigma = sigma;
        }
    }
    Ok(best)
}

/// Tail quantile at risk `q`:
/// `t + (σ/ξ)·((q·n/N_t)^(−ξ) − 1)`, or `t − σ·ln(q·n/N_t)` as ξ → 0.
pub fn pot_quantile<T: Scalar>(fit: &GpdFit<T>, q: T) -> T {
    let r = q * T::count(fit.n) / T::count(fit.n_excess);
    if fit.xi.abs() < T::lit(XI_ZERO) {
        fit.t - fit.sigma * r.ln()
    } else {
        fit.t + fit.sigma / fit.xi * (r.powf(-fit.xi) - T::one())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotOptions {
    pub q: f64,
    pub init_quantile: f64,
    pub min_excess: usize,
}

impl Default for PotOptions {
    fn default() -> Self {
        Self {
            q: DEFAULT_RISK,
            init_quantile: DEFAULT_INIT_QUANTILE,
            min_excess: DEFAULT_MIN_EXCESS,
        }
    }
}

impl PotOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Parameter(format!("risk q = {} not in (0, 1)", self.q)));
        }
        if !(self.init_quantile > 0.0 && self.init_quantile < 1.0) {
            return Err(Error::Parameter(format!(
                "initial quantile {} not in (0, 1)",
                self.init_quantile
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialThreshold<T> {
    pub threshold: T,
    /// `None` when too few excesses forced the empirical fallback.
    pub fit: Option<GpdFit<T>>,
    pub fallback: bool,
}

/// POT threshold of one segment, or its empirical `(1−q)` quantile when the
/// segment has fewer than `min_excess` values above the initial threshold.
pub fn initial_threshold<T: Scalar>(scores: &[T], opts: &PotOptions) -> Result<InitialThreshold<T>> {
    opts.validate()?;
    if scores.is_empty() {
        return Err(Error::InsufficientData("empty score segment".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite score"));
    let t = quantile_sorted(&sorted, T::lit(opts.init_quantile));
    let excesses: Vec<T> = sorted.iter().filter(|&&s| s > t).map(|&s| s - t).collect();
    match fit_gpd(&excesses, opts.min_excess) {
        Ok(p) => {
            let fit = GpdFit {
                xi: p.xi,
                sigma: p.sigma,
                t,
                n_excess: excesses.len(),
                n: scores.len(),
                method: p.method,
                degenerate: p.degenerate,
            };
            Ok(InitialThreshold {
                threshold: pot_quantile(&fit, T::lit(opts.q)),
                fit: Some(fit),
                fallback: false,
            })
        }
        Err(Error::InsufficientExcess { .. }) => Ok(InitialThreshold {
            threshold: quantile_sorted(&sorted, T::one() - T::lit(opts.q)),
            fit: None,
            fallback: true,
        }),
        Err(e) => Err(e),
    }
}

/// One refit of the sliding phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFit<T> {
    pub start: usize,
    pub threshold: T,
    pub fallback: bool,
    /// Scores left in the fit after excluding labelled anomalies.
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSeries<T> {
    pub thresholds: Vec<T>,
    pub labels: Vec<bool>,
    pub window: usize,
    pub q: f64,
    pub init_quantile: f64,
    pub fits: Vec<WindowFit<T>>,
}

impl<T: Scalar> ThresholdSeries<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_anomalies(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Sliding POT threshold over a fully scored series.
///
/// Windows of length `w` start at multiples of `h = ⌊w/2⌋`. The threshold fitted
/// on window `j` (ignoring timesteps already labelled anomalous) finalizes
/// labels on `[j·h, j·h + h)` and provisionally labels the rest of the window;
/// the tail past the last full window reuses the last threshold.
pub fn dynamic_threshold<T: Scalar>(scores: &[T], w: usize, opts: &PotOptions) -> Result<ThresholdSeries<T>> {
    opts.validate()?;
    let n = scores.len();
    if w < 2 {
        return Err(Error::Parameter(format!("threshold window {w} must be at least 2")));
    }
    if n < 2 * w {
        return Err(Error::InsufficientData(format!(
            "{n} scores is fewer than twice the threshold window {w}"
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {i} is not finite")));
    }
    let h = w / 2;
    let mut labels = vec![false; n];
    let mut thresholds = vec![T::nan(); n];
    let mut fits = Vec::new();
    let mut start = 0;
    let mut last = T::nan();
    let mut kept = Vec::with_capacity(w);
    while start + w <= n {
        kept.clear();
        kept.extend((start..start + w).filter(|&i| !labels[i]).map(|i| scores[i]));
        let init = if kept.is_empty() {
            // Every point in the window is already anomalous; keep the old bar.
            InitialThreshold {
                threshold: last,
                fit: None,
                fallback: true,
            }
        } else {
            initial_threshold(&kept, opts)?
        };
        last = init.threshold;
        fits.push(WindowFit {
            start,
            threshold: last,
            fallback: init.fallback,
            used: kept.len(),
        });
        for i in start..start + w {
            labels[i] = scores[i] > last;
            thresholds[i] = last;
        }
        start += h;
    }
    for i in start..n {
        labels[i] = scores[i] > last;
        thresholds[i] = last;
    }
    Ok(ThresholdSeries {
        thresholds,
        labels,
        window: w,
        q: opts.q,
        init_quantile: opts.init_quantile,
        fits,
    })
}

/// Dominant period of `xs` from its autocorrelation: the highest ACF peak
/// after the first zero crossing, searched up to `max_lag`.
pub fn dominant_period<T: Scalar>(xs: &[T], max_lag: usize) -> Option<usize> {
    let n = xs.len();
    let max_lag = max_lag.min(n.saturating_sub(1));
    if max_lag < 2 {
        return None;
    }
    let m = mean(xs);
    let c: Vec<f64> = xs.iter().map(|&x| (x - m).as_f64()).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum();
    if c0 <= 0.0 {
        return None;
    }
    let acf: Vec<f64> = (0..=max_lag)
        .map(|k| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect();
    let zero = acf.iter().position(|&r| r <= 0.0)?;
    let mut best: Option<(usize, f64)> = None;
    for k in zero.max(1)..max_lag {
        if acf[k] > acf[k - 1] && acf[k] >= acf[k + 1] && acf[k] > 0.1 && best.map_or(true, |(_, b)| acf[k] > b) {
            best = Some((k, acf[k]));
        }
    }
    best.map(|(k, _)| k)
}

/// Window used when none is configured: twice the dominant score period,
/// raised so a window holds about `2·min_excess` initial excesses, and capped
/// at half the series.
pub fn default_window<T: Scalar>(scores: &[T], opts: &PotOptions) -> usize {
    let n = scores.len();
    let floor = (2.0 * opts.min_excess as f64 / (1.0 - opts.init_quantile)).ceil() as usize;
    let seasonal = dominant_period(scores, n / 4).map_or(0, |p| 2 * p);
    seasonal.max(floor).min(n / 2).max(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(xi: f64, sigma: f64, r: f64) -> GpdFit<f64> {
        GpdFit {
            xi,
            sigma,
            t: 2.0,
            n_excess: 100,
            n: (r * 100.0 / 1e-3).round() as usize,
            method: FitMethod::Likelihood,
            degenerate: false,
        }
    }

    #[test]
    fn quantile_closed_forms() {
        let f = fit(0.3, 1.7, 1.0);
        assert!((pot_quantile(&f, 1e-3) - 2.0).abs() < 1e-12);
        assert!((pot_quantile(&fit(0.0, 1.0, 1.0), 1e-3) - 2.0).abs() < 1e-12);
        let e = pot_quantile(&fit(0.0, 1.0, 0.01), 1e-3) - 2.0;
        assert!((e - 100f64.ln()).abs() < 1e-9, "{e}");
        let g = pot_quantile(&fit(0.1, 1.0, 0.01), 1e-3) - 2.0;
        assert!((g - 10.0 * (100f64.powf(0.1) - 1.0)).abs() < 1e-9);
        assert!((g - 5.8489).abs() < 1e-4);
    }

    #[test]
    fn equal_excesses_use_moments() {
        let p = fit_gpd(&[0.5f64; 20], 10).unwrap();
        assert_eq!(p.method, FitMethod::Moments);
        assert!(p.degenerate);
        assert!(p.sigma > 0.0);
        assert!(p.xi >= -1.0);
        assert!(p.sigma >= -p.xi * 0.5);
    }

    #[test]
    fn too_few_excesses() {
        assert!(matches!(
            fit_gpd(&[1.0f64; 3], 10),
            Err(Error::InsufficientExcess { found: 3, required: 10 })
        ));
    }

    #[test]
    fn constant_segment_falls_back() {
        let r = initial_threshold(&[4.0f64; 50], &PotOptions::default()).unwrap();
        assert!(r.fallback);
        assert_eq!(r.threshold, 4.0);
    }

    #[test]
    fn single_spike_is_the_only_label() {
        let mut s = vec![1.0f64; 200];
        s[37] = 100.0;
        let t = dynamic_threshold(&s, 28, &PotOptions::default()).unwrap();
        let hits: Vec<usize> = (0..200).filter(|&i| t.labels[i]).collect();
        assert_eq!(hits, vec![37]);
        for i in 0..200 {
            assert_eq!(t.labels[i], s[i] > t.thresholds[i]);
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(dynamic_threshold(&[0.0f64; 30], 16, &PotOptions::default()).is_err());
    }

    #[test]
    fn period_of_sinusoid() {
        let xs: Vec<f64> = (0..600).map(|i| (i as f64 * std::f64::consts::TAU / 50.0).sin()).collect();
        assert_eq!(dominant_period(&xs, 150), Some(50));
    }
}

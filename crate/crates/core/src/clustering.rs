//! Correlation-based feature grouping.
//!
//! Features are compared through their Pearson correlation matrix. Each
//! feature is embedded as its row of that matrix (its correlation profile)
//! and grouped with seeded K-means; cluster quality is scored by the
//! silhouette coefficient over the correlation distance `√(2(1−r))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::scalar::Scalar;

/// Name of the K-means embedding, persisted with every clustering result.
pub const EMBEDDING: &str = "correlation-profile-rows";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix<T> {
    names: Vec<String>,
    values: Vec<T>,
    /// Zero-variance features; their off-diagonal entries are 0.
    degenerate: Vec<bool>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let f = self.len();
        &self.values[i * f..(i + 1) * f]
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// Builds a matrix from explicit entries, e.g. a constructed block
    /// structure. Entries must be symmetric with unit diagonal.
    pub fn from_values(names: Vec<String>, values: Vec<T>) -> Result<Self> {
        let f = names.len();
        if values.len() != f * f {
            return Err(Error::Schema(format!("{} entries for {f} features", values.len())));
        }
        for i in 0..f {
            if values[i * f + i] != T::one() {
                return Err(Error::Domain(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..f {
                let v = values[i * f + j];
                if v != values[j * f + i] || v.abs() > T::one() {
                    return Err(Error::Domain(format!("entry ({i}, {j}) breaks symmetry or range")));
                }
            }
        }
        Ok(Self {
            names,
            values,
            degenerate: vec![false; f],
        })
    }
}

/// Pearson correlation of every feature pair. Constant features correlate 0
/// with everything else and are flagged; the diagonal is exactly 1.
pub fn correlation_matrix<T: Scalar>(frame: &TimeSeriesFrame<T>) -> Result<CorrelationMatrix<T>> {
    let n = frame.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("correlation needs N ≥ 2, got {n}")));
    }
    let f = frame.n_features();
    let centered: Vec<Vec<T>> = (0..f)
        .map(|c| {
            let col = frame.column(c);
            let m = crate::scalar::mean(&col);
            col.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let ss: Vec<T> = centered.iter().map(|c| c.iter().map(|&v| v * v).sum()).collect();
    let degenerate: Vec<bool> = ss.iter().map(|&s| !(s > T::zero())).collect();
    let mut values = vec![T::zero(); f * f];
    for i in 0..f {
        values[i * f + i] = T::one();
        for j in (i + 1)..f {
            let r = if degenerate[i] || degenerate[j] {
                T::zero()
            } else {
                let cov: T = centered[i].iter().zip(&centered[j]).map(|(&a, &b)| a * b).sum();
                (cov / (ss[i] * ss[j]).sqrt()).max(-T::one()).min(T::one())
            };
            values[i * f + j] = r;
            values[j * f + i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: frame.names().to_vec(),
        values,
        degenerate,
    })
}

/// `√(2(1−r))`. Inputs within 1e−12 outside `[−1, 1]` are clamped.
pub fn correlation_distance<T: Scalar>(r: T) -> Result<T> {
    let tol = T::lit(1e-12);
    if !r.is_finite() || r > T::one() + tol || r < -T::one() - tol {
        return Err(Error::Domain(format!("correlation {r} outside [-1, 1]")));
    }
    let r = r.max(-T::one()).min(T::one());
    Ok((T::lit(2.0) * (T::one() - r)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClustering<T> {
    /// Disjoint feature-index sets covering every feature.
    pub clusters: Vec<Vec<usize>>,
    pub k: usize,
    pub inertia: T,
    pub silhouette: T,
    /// One centroid per cluster in correlation-profile space.
    pub centroids: Vec<Vec<T>>,
    pub names: Vec<String>,
}

impl<T: Scalar> FeatureClustering<T> {
    /// Cluster index of every feature.
    pub fn assignments(&self) -> Vec<usize> {
        let n = self.clusters.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (j, c) in self.clusters.iter().enumerate() {
            for &i in c {
                out[i] = j;
            }
        }
        out
    }

    pub fn cluster_names(&self) -> Vec<Vec<String>> {
        self.clusters
            .iter()
            .map(|c| c.iter().map(|&i| self.names[i].clone()).collect())
            .collect()
    }

    /// Order-independent form: each set sorted, sets sorted by first member.
    pub fn canonical_partition(&self) -> Vec<Vec<usize>> {
        canonical(&self.clusters)
    }

    pub fn record(&self, seed: u64) -> ClusteringRecord {
        ClusteringRecord {
            k: self.k,
            clusters: self.cluster_names(),
            silhouette: self.silhouette.as_f64(),
            inertia: self.inertia.as_f64(),
            seed,
            embedding: EMBEDDING.to_string(),
        }
    }
}

/// JSON form of a clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRecord {
    pub k: usize,
    pub clusters: Vec<Vec<String>>,
    pub silhouette: f64,
    pub inertia: f64,
    pub seed: u64,
    pub embedding: String,
}

impl ClusteringRecord {
    /// Resolves cluster names back to indices of `names`.
    pub fn indices(&self, names: &[String]) -> Result<Vec<Vec<usize>>> {
        self.clusters
            .iter()
            .map(|c| {
                c.iter()
                    .map(|n| {
                        names
                            .iter()
                            .position(|m| m == n)
                            .ok_or_else(|| Error::Schema(format!("clustered feature `{n}` not in frame")))
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn canonical(clusters: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let mut c = c.clone();
            c.sort_unstable();
            c
        })
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iter: 300,
        }
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone)]
pub(crate) struct LloydRun<T> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
    /// Inertia after each assign/update step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub history: Vec<T>,
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp_init<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1.as_f64()).collect();
        let total: f64 = d.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = d.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if target < di {
                    chosen = i;
                    break;
                }
                target -= di;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[idx].clone());
    }
    centroids
}

fn update_centroids<T: Scalar>(points: &[Vec<T>], assignments: &mut [usize], k: usize) -> Vec<Vec<T>> {
    let dim = points[0].len();
    loop {
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(assignments.iter()) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p) {
                *s = *s + v;
            }
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return sums
                .into_iter()
                .zip(counts)
                .map(|(s, c)| s.into_iter().map(|v| v / T::count(c)).collect())
                .collect();
        };
        // Reseed the empty cluster with the point farthest from its centroid,
        // taken from a cluster that can spare it.
        let centroids: Vec<Vec<T>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| {
                let c = T::count(c.max(1));
                s.iter().map(|&v| v / c).collect()
            })
            .collect();
        let mut far = None;
        let mut far_d = -T::one();
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => assignments[i] = empty,
            None => unreachable!("k ≤ number of points"),
        }
    }
}

fn inertia_of<T: Scalar>(points: &[Vec<T>], assignments: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

pub(crate) fn lloyd<T: Scalar>(points: &[Vec<T>], init: Vec<Vec<T>>, max_iter: usize) -> LloydRun<T> {
    let k = init.len();
    let mut centroids = init;
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    centroids = update_centroids(points, &mut assignments, k);
    let mut history = vec![inertia_of(points, &assignments, &centroids)];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            // Only move when strictly closer so ties cannot oscillate.
            if j != assignments[i] && d < sq_dist(p, &centroids[assignments[i]]) {
                assignments[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        centroids = update_centroids(points, &mut assignments, k);
        let current = inertia_of(points, &assignments, &centroids);
        debug_assert!(current <= history[history.len() - 1] + T::lit(1e-9), "inertia increased");
        history.push(current);
    }
    let inertia = *history.last().expect("at least one step");
    LloydRun {
        assignments,
        centroids,
        inertia,
        history,
    }
}

/// Mean silhouette over all features using correlation distances. Singleton
/// clusters score 0, as does any point with `max(a, b) = 0`.
pub fn silhouette<T: Scalar>(r: &CorrelationMatrix<T>, assignments: &[usize]) -> T {
    let f = r.len();
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    if f == 0 || k < 2 {
        return T::zero();
    }
    let dist = |i: usize, j: usize| correlation_distance(r.get(i, j)).unwrap_or_else(|_| T::lit(2.0));
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let mut total = T::zero();
    for i in 0..f {
        let own = assignments[i];
        if sizes[own] < 2 {
            continue;
        }
        let mut sums = vec![T::zero(); k];
        for j in 0..f {
            if j != i {
                sums[assignments[j]] = sums[assignments[j]] + dist(i, j);
            }
        }
        let a = sums[own] / T::count(sizes[own] - 1);
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / T::count(sizes[c]))
            .fold(T::infinity(), T::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > T::zero() {
            total = total + (b - a) / m;
        }
    }
    total / T::count(f)
}

/// K-means over correlation profiles with `restarts` seeded k-means++ runs,
/// keeping the lowest inertia. Zero-variance features are split off as
/// singleton clusters first and count toward `k`.
pub fn kmeans_cluster<T: Scalar>(
    r: &CorrelationMatrix<T>,
    k: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<FeatureClustering<T>> {
    let f = r.len();
    if k == 0 || k > f {
        return Err(Error::Parameter(format!("k = {k} with {f} features")));
    }
    let restarts = options.restarts.max(1);
    let live: Vec<usize> = (0..f).filter(|&i| !r.degenerate()[i]).collect();
    let dead: Vec<usize> = (0..f).filter(|&i| r.degenerate()[i]).collect();

    let mut clusters: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut centroids: Vec<Vec<T>> = Vec::with_capacity(k);
    let k_live;
    if live.is_empty() {
        k_live = 0;
    } else {
        // Degenerate singletons first, then at least one live cluster.
        k_live = k.saturating_sub(dead.len()).max(1).min(live.len());
    }
    let n_dead_single = (k - k_live).min(dead.len());
    for &d in &dead[..n_dead_single] {
        clusters.push(vec![d]);
        centroids.push(r.row(d).to_vec());
    }
    let mut leftover_dead: Vec<usize> = dead[n_dead_single..].to_vec();

    let mut inertia = T::zero();
    if k_live > 0 {
        let points: Vec<Vec<T>> = live.iter().map(|&i| r.row(i).to_vec()).collect();
        let runs: Vec<LloydRun<T>> = (0..restarts)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                let init = kmeans_pp_init(&points, k_live, &mut rng);
                lloyd(&points, init, options.max_iter)
            })
            .collect();
        let best = runs
            .into_iter()
            .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
            .expect("at least one restart");
        inertia = best.inertia;
        let offset = clusters.len();
        for _ in 0..k_live {
            clusters.push(Vec::new());
        }
        for (p, &a) in best.assignments.iter().enumerate() {
            clusters[offset + a].push(live[p]);
        }
        centroids.extend(best.centroids);
    }
    // More degenerate features than singleton slots: pool them with the last
    // degenerate singleton.
    if !leftover_dead.is_empty() {
        match clusters.iter_mut().find(|c| c.len() == 1 && r.degenerate()[c[0]]) {
            Some(c) => c.append(&mut leftover_dead),
            None => clusters.push(std::mem::take(&mut leftover_dead)),
        }
    }
    let clustering_k = clusters.len();
    let mut out = FeatureClustering {
        clusters,
        k: clustering_k,
        inertia,
        silhouette: T::zero(),
        centroids,
        names: r.names().to_vec(),
    };
    out.silhouette = silhouette(r, &out.assignments());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostic {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
    /// Second difference of inertia, where both neighbours were evaluated.
    pub second_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub elbow: usize,
    /// True when the inertia curve is flat (no structure to select from).
    pub degenerate: bool,
    pub diagnostics: Vec<KDiagnostic>,
}

/// Silhouette gap above which a neighbouring k overrides the elbow.
pub const SILHOUETTE_OVERRIDE: f64 = 0.05;

/// Elbow (maximum second difference of inertia) with a silhouette check
/// against the neighbouring k values. Inertia at `k_min − 1` is evaluated
/// when possible so the elbow may land on `k_min` itself.
pub fn select_k<T: Scalar>(
    r: &CorrelationMatrix<T>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<KSelection> {
    let f = r.len();
    if k_max < 3 {
        return Err(Error::Parameter(format!(
            "k_max = {k_max}: need at least 3 candidates for a second difference"
        )));
    }
    if k_min == 0 || k_min >= k_max || k_max > f {
        return Err(Error::Parameter(format!(
            "k range [{k_min}, {k_max}] invalid for {f} features"
        )));
    }
    let lo = k_min.saturating_sub(1).max(1);
    let fits: Vec<(usize, FeatureClustering<T>)> = (lo..=k_max)
        .map(|k| kmeans_cluster(r, k, seed, options).map(|c| (k, c)))
        .collect::<Result<_>>()?;
    let inertia = |k: usize| fits[k - lo].1.inertia.as_f64();
    let sil = |k: usize| fits[k - lo].1.silhouette.as_f64();

    let diagnostics: Vec<KDiagnostic> = (k_min..=k_max)
        .map(|k| KDiagnostic {
            k,
            inertia: inertia(k),
            silhouette: sil(k),
            second_difference: (k > lo && k < k_max).then(|| inertia(k - 1) - 2.0 * inertia(k) + inertia(k + 1)),
        })
        .collect();

    let max_inertia = (lo..=k_max).map(inertia).fold(0.0, f64::max);
    if max_inertia < 1e-10 {
        return Ok(KSelection {
            k: k_min,
            elbow: k_min,
            degenerate: true,
            diagnostics,
        });
    }
    let mut elbow = None;
    let mut best = f64::NEG_INFINITY;
    for d in &diagnostics {
        if let Some(sd) = d.second_difference {
            if sd > best {
                best = sd;
                elbow = Some(d.k);
            }
        }
    }
    let elbow = elbow.expect("k_max ≥ 3 leaves a candidate");
    let mut k = elbow;
    let mut best_sil = sil(elbow);
    for nb in [elbow.wrapping_sub(1), elbow + 1] {
        if nb >= k_min && nb <= k_max && sil(nb) > sil(elbow) + SILHOUETTE_OVERRIDE && sil(nb) > best_sil {
            best_sil = sil(nb);
            k = nb;
        }
    }
    Ok(KSelection {
        k,
        elbow,
        degenerate: false,
        diagnostics,
    })
}

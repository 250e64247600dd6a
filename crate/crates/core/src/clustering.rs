//! Partitioning the pool into identity clusters with seeded k-means.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{
    save_features, FeatureError, FeatureFormat, FeatureTable, IdentityIndex,
};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of points ({points})")]
    TooManyClusters { k: usize, points: usize },
    #[error("points contain a non-finite value")]
    NonFinite,
    #[error("identity index is empty")]
    NoIdentities,
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Per-identity mean features, one row per identity in lexicographic ID order.
#[derive(Debug, Clone)]
pub struct IdentityFeatures {
    pub ids: Vec<String>,
    pub points: DMatrix<f64>,
}

/// Averages each identity's image rows into a single point.
pub fn identity_features(table: &FeatureTable, index: &IdentityIndex) -> IdentityFeatures {
    let d = table.dim();
    let mut points = DMatrix::zeros(index.len(), d);
    let mut ids = Vec::with_capacity(index.len());
    let mut acc = vec![0.0f64; d];
    for (i, identity) in index.identities().iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &r in &identity.rows {
            for (a, &v) in acc.iter_mut().zip(table.row(r)) {
                *a += v as f64;
            }
        }
        let n = identity.rows.len() as f64;
        for (j, a) in acc.iter().enumerate() {
            points[(i, j)] = a / n;
        }
        ids.push(identity.id.clone());
    }
    IdentityFeatures { ids, points }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid shift, relative to the
    /// root of the total per-feature variance of the points.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// Output of [`kmeans`] over anonymous points.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `k x d` centroid matrix.
    pub centroids: DMatrix<f64>,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    /// Within-cluster sum of squares after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Lloyd {
    /// Row-major, centred on the global mean.
    rows: Vec<f64>,
    centred: DMatrix<f64>,
    norms: Vec<f64>,
    m: usize,
    d: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..4 {
            let t = x[l] - y[l];
            lanes[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = x - y;
        tail += t * t;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

impl Lloyd {
    fn new(points: &DMatrix<f64>) -> (Self, Vec<f64>) {
        let (m, d) = points.shape();
        let mean: Vec<f64> = (0..d)
            .map(|j| points.column(j).iter().sum::<f64>() / m as f64)
            .collect();
        let mut centred = points.clone();
        for j in 0..d {
            centred.column_mut(j).iter_mut().for_each(|v| *v -= mean[j]);
        }
        let mut rows = vec![0.0; m * d];
        for i in 0..m {
            for j in 0..d {
                rows[i * d + j] = centred[(i, j)];
            }
        }
        let norms = rows.chunks_exact(d).map(|r| r.iter().map(|v| v * v).sum()).collect();
        (
            Self {
                rows,
                centred,
                norms,
                m,
                d,
            },
            mean,
        )
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    fn scale(&self) -> f64 {
        (self.norms.iter().sum::<f64>() / self.m as f64).sqrt()
    }

    fn plus_plus(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.d;
        let mut centroids = Vec::with_capacity(k * d);
        let first = rng.random_range(0..self.m);
        centroids.extend_from_slice(self.row(first));
        let mut best: Vec<f64> = (0..self.m)
            .map(|i| sq_dist(self.row(i), self.row(first)))
            .collect();
        for _ in 1..k {
            let total: f64 = best.iter().sum();
            let pick = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = None;
                let mut last_positive = 0;
                for (i, &w) in best.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    last_positive = i;
                    acc += w;
                    if acc > target {
                        chosen = Some(i);
                        break;
                    }
                }
                chosen.unwrap_or(last_positive)
            } else {
                rng.random_range(0..self.m)
            };
            let start = centroids.len();
            centroids.extend_from_slice(self.row(pick));
            let c = &centroids[start..];
            for (i, b) in best.iter_mut().enumerate() {
                let dist = sq_dist(&self.rows[i * d..(i + 1) * d], c);
                if dist < *b {
                    *b = dist;
                }
            }
        }
        centroids
    }

    /// Nearest-centroid candidates via `|x|^2 + |c|^2 - 2 x·c`.
    fn candidates(&self, centroids: &[f64], k: usize) -> Vec<usize> {
        let c = DMatrix::from_row_slice(k, self.d, centroids);
        let cnorm: Vec<f64> = centroids
            .chunks_exact(self.d)
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        let dots = &self.centred * c.transpose();
        (0..self.m)
            .map(|i| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for j in 0..k {
                    let dist = self.norms[i] + cnorm[j] - 2.0 * dots[(i, j)];
                    if dist < best_d {
                        best_d = dist;
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Moves a point only when its exact distance strictly improves, so
    /// every point's contribution to the inertia is non-increasing.
    fn reassign(&self, centroids: &[f64], k: usize, labels: &mut [usize]) -> usize {
        let d = self.d;
        let mut changed = 0;
        for (i, cand) in self.candidates(centroids, k).into_iter().enumerate() {
            let cur = labels[i];
            if cand == cur {
                continue;
            }
            let x = self.row(i);
            let new_d = sq_dist(x, &centroids[cand * d..(cand + 1) * d]);
            let old_d = sq_dist(x, &centroids[cur * d..(cur + 1) * d]);
            if new_d < old_d {
                labels[i] = cand;
                changed += 1;
            }
        }
        changed
    }

    fn distances(&self, centroids: &[f64], labels: &[usize]) -> Vec<f64> {
        let d = self.d;
        labels
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(self.row(i), &centroids[c * d..(c + 1) * d]))
            .collect()
    }

    /// Gives every empty cluster the point farthest from its own centroid,
    /// taken from a cluster that keeps at least one member.
    fn repair(&self, centroids: &mut [f64], labels: &mut [usize], sizes: &mut [usize]) -> usize {
        let d = self.d;
        let mut repaired = 0;
        let mut dist: Option<Vec<f64>> = None;
        for empty in 0..sizes.len() {
            if sizes[empty] > 0 {
                continue;
            }
            let dist = dist.get_or_insert_with(|| self.distances(centroids, labels));
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..self.m {
                if sizes[labels[i]] > 1 && dist[i] > far_d {
                    far_d = dist[i];
                    far = Some(i);
                }
            }
            let i = far.expect("k <= m guarantees a donor cluster");
            sizes[labels[i]] -= 1;
            labels[i] = empty;
            sizes[empty] = 1;
            dist[i] = 0.0;
            centroids[empty * d..(empty + 1) * d].copy_from_slice(self.row(i));
            repaired += 1;
        }
        repaired
    }

    fn means(&self, labels: &[usize], sizes: &[usize]) -> Vec<f64> {
        let d = self.d;
        let mut sums = vec![0.0; sizes.len() * d];
        for (i, &c) in labels.iter().enumerate() {
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        for (c, &n) in sizes.iter().enumerate() {
            sums[c * d..(c + 1) * d]
                .iter_mut()
                .for_each(|v| *v /= n as f64);
        }
        sums
    }
}

fn sizes_of(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// Lloyd's algorithm from a k-means++ start, seeded and deterministic.
///
/// Stops once the largest centroid shift drops to `tol` times the data scale,
/// no point changes cluster, or `max_iter` updates have run. Empty clusters
/// are reseeded with the point farthest from its centroid, so every cluster
/// in the result is non-empty.
pub fn kmeans(points: &DMatrix<f64>, params: &KMeansParams, rng: &mut ChaCha8Rng) -> Result<KMeans, ClusterError> {
    let (m, d) = points.shape();
    let k = params.k;
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > m {
        return Err(ClusterError::TooManyClusters { k, points: m });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let (lloyd, offset) = Lloyd::new(points);
    let threshold = match params.tol * lloyd.scale() {
        t if t > 0.0 => t,
        _ => params.tol,
    };

    let mut centroids = lloyd.plus_plus(k, rng);
    let mut labels = lloyd.candidates(&centroids, k);
    let mut sizes = sizes_of(&labels, k);
    lloyd.repair(&mut centroids, &mut labels, &mut sizes);
    let mut history = vec![lloyd.distances(&centroids, &labels).iter().sum::<f64>()];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let updated = lloyd.means(&labels, &sizes);
        let shift = updated
            .chunks_exact(d)
            .zip(centroids.chunks_exact(d))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        iterations += 1;
        let mut changed = lloyd.reassign(&centroids, k, &mut labels);
        sizes = sizes_of(&labels, k);
        changed += lloyd.repair(&mut centroids, &mut labels, &mut sizes);
        history.push(lloyd.distances(&centroids, &labels).iter().sum());
        if changed == 0 || shift <= threshold {
            converged = true;
            break;
        }
    }

    let inertia = *history.last().unwrap();
    let mut out = DMatrix::from_row_slice(k, d, &centroids);
    for j in 0..d {
        out.column_mut(j).iter_mut().for_each(|v| *v += offset[j]);
    }
    Ok(KMeans {
        labels,
        centroids: out,
        sizes,
        inertia,
        inertia_history: history,
        iterations,
        converged,
    })
}

/// Identity-to-cluster partition of a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Identity IDs in lexicographic order, aligned with `labels`.
    pub identity_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    /// Identities per cluster.
    pub sizes: Vec<usize>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.identity_ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().copied())
            .collect()
    }

    /// Identity positions (into the identity list) per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k()];
        for (i, &c) in self.labels.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    pub fn assignment_tsv(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.identity_ids.iter().zip(&self.labels) {
            out.push_str(&format!("{id}\t{c}\n"));
        }
        out
    }

    pub fn centroid_table(&self) -> Result<FeatureTable, FeatureError> {
        let (k, d) = self.centroids.shape();
        let mut data = Vec::with_capacity(k * d);
        for c in 0..k {
            data.extend(self.centroids.row(c).iter().map(|&v| v as f32));
        }
        FeatureTable::new((0..k).map(|c| format!("cluster{c}")).collect(), data, d)
    }

    /// Writes `assignment.tsv` and `centroids.fsf` (with its ID sidecar).
    pub fn save(&self, dir: &Path) -> Result<(), FeatureError> {
        let path = dir.join("assignment.tsv");
        fs::write(&path, self.assignment_tsv())
            .map_err(|source| FeatureError::Io { path, source })?;
        save_features(
            &self.centroid_table()?,
            &dir.join("centroids.fsf"),
            FeatureFormat::Binary,
        )
    }
}

/// Clusters the identities of `index` on their averaged features.
pub fn cluster_identities(
    table: &FeatureTable,
    index: &IdentityIndex,
    params: &KMeansParams,
    rng: &mut ChaCha8Rng,
) -> Result<Clustering, ClusterError> {
    if index.is_empty() {
        return Err(ClusterError::NoIdentities);
    }
    let features = identity_features(table, index);
    let km = kmeans(&features.points, params, rng)?;
    Ok(Clustering {
        identity_ids: features.ids,
        labels: km.labels,
        centroids: km.centroids,
        sizes: km.sizes,
        inertia: km.inertia,
        inertia_history: km.inertia_history,
        iterations: km.iterations,
        converged: km.converged,
    })
}

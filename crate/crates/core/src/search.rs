//! Cluster scoring and training-set sampling.
//!
//! Every cluster is scored by its Fréchet distance to the target, the scores
//! are turned into cluster weights with a softmax over negated distances,
//! each identity in cluster `k` gets mass `w_k / |S_k|`, and identities are
//! then drawn without replacement until the image budget is met.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    cluster_identities, ClusterError, Clustering, KMeansParams, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::features::{FeatureTable, IdentityIndex};
use crate::fid::{fid, summarize_rows, FidError, GaussianStats};
use crate::rng::{stream_rng, Stream};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 100;
pub const DEFAULT_N: usize = 100;
pub const DEFAULT_MIN_CLUSTER_IMAGES: usize = 2;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("every cluster is below the scoring threshold; no cluster can be weighted")]
    AllUnscorable,
    #[error("invalid FID value {value} for cluster {cluster}")]
    InvalidFid { cluster: usize, value: f64 },
    #[error("n must be at least 1")]
    ZeroN,
    #[error("n = {requested} exceeds the {available} images available in positive-weight clusters")]
    NotEnoughImages { requested: usize, available: usize },
    #[error("clustering does not match the identity index")]
    InconsistentClustering,
    #[error("target set needs at least 2 rows, got {0}")]
    TargetTooSmall(usize),
    #[error("pool has {pool} feature columns but the target has {target}")]
    DimensionMismatch { pool: usize, target: usize },
    #[error(transparent)]
    Fid(#[from] FidError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Cluster, score and sample by softmax weights.
    Greedy,
    /// Uniform identity sampling, the baseline.
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown strategy {other:?} (expected greedy or random)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Random => "random",
        })
    }
}

/// FID of each cluster to the target and the derived sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScores {
    /// `+inf` marks clusters too small to score.
    pub fids: Vec<f64>,
    pub weights: Vec<f64>,
    /// Images per cluster.
    pub image_counts: Vec<usize>,
}

/// `softmax(-fids)`, shifted by the smallest finite FID. Infinite FIDs get
/// weight exactly zero.
pub fn softmax_weights(fids: &[f64]) -> Result<Vec<f64>, SearchError> {
    if let Some((cluster, &value)) = fids
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v == f64::NEG_INFINITY)
    {
        return Err(SearchError::InvalidFid { cluster, value });
    }
    let best = fids
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(SearchError::AllUnscorable);
    }
    let raw: Vec<f64> = fids
        .iter()
        .map(|&f| if f.is_finite() { (-(f - best)).exp() } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn cluster_rows(clustering: &Clustering, index: &IdentityIndex) -> Vec<Vec<usize>> {
    clustering
        .members()
        .into_iter()
        .map(|members| {
            members
                .into_iter()
                .flat_map(|i| index.identities()[i].rows.iter().copied())
                .collect()
        })
        .collect()
}

fn check_consistent(clustering: &Clustering, index: &IdentityIndex) -> Result<(), SearchError> {
    let same = clustering.identity_ids.len() == index.len()
        && clustering
            .identity_ids
            .iter()
            .zip(index.identities())
            .all(|(a, b)| *a == b.id);
    if same {
        Ok(())
    } else {
        Err(SearchError::InconsistentClustering)
    }
}

/// Scores every cluster against the target summary. Clusters holding fewer
/// than `min_cluster_images` images (and never fewer than 2) are unscorable.
pub fn score_clusters(
    target: &GaussianStats,
    clustering: &Clustering,
    table: &FeatureTable,
    index: &IdentityIndex,
    min_cluster_images: usize,
) -> Result<ClusterScores, SearchError> {
    check_consistent(clustering, index)?;
    if target.dim() != table.dim() {
        return Err(SearchError::DimensionMismatch {
            pool: table.dim(),
            target: target.dim(),
        });
    }
    let threshold = min_cluster_images.max(2);
    let rows = cluster_rows(clustering, index);
    let fids = rows
        .par_iter()
        .map(|rows| {
            if rows.len() < threshold {
                return Ok(f64::INFINITY);
            }
            let stats = summarize_rows(rows.iter().map(|&r| table.row(r)), table.dim())?;
            fid(target, &stats)
        })
        .collect::<Result<Vec<f64>, FidError>>()?;
    let weights = softmax_weights(&fids)?;
    Ok(ClusterScores {
        fids,
        weights,
        image_counts: rows.iter().map(Vec::len).collect(),
    })
}

/// One identity drawn into the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// Position in the identity index.
    pub identity: usize,
    /// Sampling group (cluster) it was drawn from.
    pub group: usize,
    /// Probability mass the identity carried.
    pub mass: f64,
    /// Table rows taken, in identity order.
    pub rows: Vec<usize>,
}

/// The sampled training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub draws: Vec<Draw>,
}

impl Selection {
    /// Selected table rows in draw order.
    pub fn rows(&self) -> Vec<usize> {
        self.draws.iter().flat_map(|d| d.rows.iter().copied()).collect()
    }

    pub fn image_ids(&self, table: &FeatureTable) -> Vec<String> {
        self.rows().into_iter().map(|r| table.ids()[r].clone()).collect()
    }
}

/// Identities sharing one per-identity mass.
struct Group {
    mass: f64,
    remaining: Vec<usize>,
}

/// Draws identities without replacement, each draw proportional to the
/// masses of the identities still available, until `n` images are collected.
/// The last identity drawn contributes a random subset of its images when it
/// would overshoot the budget.
fn draw_identities(
    groups: Vec<Group>,
    index: &IdentityIndex,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Selection, SearchError> {
    if n == 0 {
        return Err(SearchError::ZeroN);
    }
    let mut groups: Vec<Group> = groups;
    let available: usize = groups
        .iter()
        .filter(|g| g.mass > 0.0)
        .flat_map(|g| g.remaining.iter())
        .map(|&i| index.identities()[i].rows.len())
        .sum();
    if n > available {
        return Err(SearchError::NotEnoughImages {
            requested: n,
            available,
        });
    }
    let mut budget = n;
    let mut draws = Vec::new();
    while budget > 0 {
        // Cluster totals are recomputed from counts on every draw, so tiny
        // masses are never lost to cancellation.
        let totals: Vec<f64> = groups
            .iter()
            .map(|g| if g.mass > 0.0 { g.mass * g.remaining.len() as f64 } else { 0.0 })
            .collect();
        let total: f64 = totals.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (gi, &t) in totals.iter().enumerate() {
            if t <= 0.0 {
                continue;
            }
            pick = Some(gi);
            acc += t;
            if acc > target {
                break;
            }
        }
        let gi = pick.expect("positive mass remains while budget is within availability");
        let group = &mut groups[gi];
        let slot = rng.random_range(0..group.remaining.len());
        let identity = group.remaining.swap_remove(slot);
        let all = &index.identities()[identity].rows;
        let rows = if all.len() <= budget {
            all.clone()
        } else {
            let mut picked = sample(rng, all.len(), budget).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        };
        budget -= rows.len();
        draws.push(Draw {
            identity,
            group: gi,
            mass: group.mass,
            rows,
        });
    }
    Ok(Selection { draws })
}

/// Samples `n` images with identity mass `w_k / |S_k|`.
pub fn sample_training_set(
    scores: &ClusterScores,
    clustering: &Clustering,
    index: &IdentityIndex,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Selection, SearchError> {
    check_consistent(clustering, index)?;
    let groups = clustering
        .members()
        .into_iter()
        .zip(&scores.weights)
        .map(|(remaining, &w)| Group {
            mass: w / remaining.len() as f64,
            remaining,
        })
        .collect();
    draw_identities(groups, index, n, rng)
}

/// Uniform identity sampling without replacement until `n` images.
pub fn random_selection(
    index: &IdentityIndex,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Selection, SearchError> {
    let groups = vec![Group {
        mass: 1.0 / index.len().max(1) as f64,
        remaining: (0..index.len()).collect(),
    }];
    draw_identities(groups, index, n, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub strategy: Strategy,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub min_cluster_images: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            k: DEFAULT_K,
            n: DEFAULT_N,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            min_cluster_images: DEFAULT_MIN_CLUSTER_IMAGES,
        }
    }
}

impl SearchParams {
    pub fn kmeans(&self) -> KMeansParams {
        KMeansParams {
            k: self.k,
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestConfig {
    #[serde(flatten)]
    pub params: SearchParams,
    /// Input locations echoed from the caller (e.g. file paths).
    pub inputs: BTreeMap<String, String>,
}

/// Versioned, self-describing record of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchManifest {
    pub version: u32,
    pub config: ManifestConfig,
    pub seed: u64,
    /// Per-cluster FID to the target; `null` for unscorable clusters.
    pub cluster_fids: Vec<Option<f64>>,
    pub weights: Vec<f64>,
    /// Identities per cluster.
    pub cluster_sizes: Vec<usize>,
    pub cluster_images: Vec<usize>,
    pub inertia: Option<f64>,
    pub target_count: usize,
    pub selected_ids: Vec<String>,
    /// Sampling mass of every selected identity.
    pub identity_weights: BTreeMap<String, f64>,
    /// Cluster of every pool identity.
    pub assignment: BTreeMap<String, usize>,
}

impl SearchManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Newline-delimited selected image IDs.
    pub fn ids_text(&self) -> String {
        let mut out = String::new();
        for id in &self.selected_ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }
}

/// Everything a search produced.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub manifest: SearchManifest,
    pub selection: Selection,
    pub clustering: Option<Clustering>,
    pub scores: Option<ClusterScores>,
}

pub fn target_stats(target: &FeatureTable) -> Result<GaussianStats, SearchError> {
    if target.len() < 2 {
        return Err(SearchError::TargetTooSmall(target.len()));
    }
    Ok(summarize_rows(
        (0..target.len()).map(|r| target.row(r)),
        target.dim(),
    )?)
}

/// Clusters and scores the pool once; the result can be sampled repeatedly.
pub fn prepare_greedy(
    pool: &FeatureTable,
    pool_index: &IdentityIndex,
    target: &GaussianStats,
    params: &SearchParams,
) -> Result<(Clustering, ClusterScores), SearchError> {
    let mut rng = stream_rng(params.seed, Stream::Clustering);
    let clustering = cluster_identities(pool, pool_index, &params.kmeans(), &mut rng)?;
    let scores = score_clusters(
        target,
        &clustering,
        pool,
        pool_index,
        params.min_cluster_images,
    )?;
    Ok((clustering, scores))
}

/// Draws a training set for `params.n` from a prepared clustering.
pub fn sample_prepared(
    clustering: &Clustering,
    scores: &ClusterScores,
    pool_index: &IdentityIndex,
    n: usize,
    seed: u64,
) -> Result<Selection, SearchError> {
    let mut rng = stream_rng(seed, Stream::Sampling);
    sample_training_set(scores, clustering, pool_index, n, &mut rng)
}

pub fn sample_random(index: &IdentityIndex, n: usize, seed: u64) -> Result<Selection, SearchError> {
    let mut rng = stream_rng(seed, Stream::RandomBaseline);
    random_selection(index, n, &mut rng)
}

/// FID between the target summary and the selected pool rows.
pub fn selection_fid(
    pool: &FeatureTable,
    rows: &[usize],
    target: &GaussianStats,
) -> Result<f64, SearchError> {
    let stats = summarize_rows(rows.iter().map(|&r| pool.row(r)), pool.dim())?;
    Ok(fid(target, &stats)?)
}

/// The full pipeline: identity features, k-means, cluster scoring, sampling.
pub fn run_search(
    pool: &FeatureTable,
    pool_index: &IdentityIndex,
    target: &FeatureTable,
    params: &SearchParams,
    inputs: BTreeMap<String, String>,
) -> Result<SearchOutcome, SearchError> {
    if params.n == 0 {
        return Err(SearchError::ZeroN);
    }
    if pool.dim() != target.dim() {
        return Err(SearchError::DimensionMismatch {
            pool: pool.dim(),
            target: target.dim(),
        });
    }
    let stats = target_stats(target)?;
    let (selection, clustering, scores) = match params.strategy {
        Strategy::Greedy => {
            let (clustering, scores) = prepare_greedy(pool, pool_index, &stats, params)?;
            let selection =
                sample_prepared(&clustering, &scores, pool_index, params.n, params.seed)?;
            (selection, Some(clustering), Some(scores))
        }
        Strategy::Random => (sample_random(pool_index, params.n, params.seed)?, None, None),
    };

    let identity_weights = selection
        .draws
        .iter()
        .map(|d| (pool_index.identities()[d.identity].id.clone(), d.mass))
        .collect();
    let manifest = SearchManifest {
        version: MANIFEST_VERSION,
        config: ManifestConfig {
            params: params.clone(),
            inputs,
        },
        seed: params.seed,
        cluster_fids: scores
            .as_ref()
            .map(|s| s.fids.iter().map(|f| f.is_finite().then_some(*f)).collect())
            .unwrap_or_default(),
        weights: scores.as_ref().map(|s| s.weights.clone()).unwrap_or_default(),
        cluster_sizes: clustering.as_ref().map(|c| c.sizes.clone()).unwrap_or_default(),
        cluster_images: scores
            .as_ref()
            .map(|s| s.image_counts.clone())
            .unwrap_or_default(),
        inertia: clustering.as_ref().map(|c| c.inertia),
        target_count: target.len(),
        selected_ids: selection.image_ids(pool),
        identity_weights,
        assignment: clustering
            .as_ref()
            .map(|c| {
                c.identity_ids
                    .iter()
                    .cloned()
                    .zip(c.labels.iter().copied())
                    .collect()
            })
            .unwrap_or_default(),
    };
    Ok(SearchOutcome {
        manifest,
        selection,
        clustering,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn singleton_pool(n: usize) -> (FeatureTable, IdentityIndex) {
        let t = FeatureTable::new(
            (0..n).map(|i| format!("img{i:03}")).collect(),
            (0..n).map(|i| i as f32).collect(),
            1,
        )
        .unwrap();
        let idx = IdentityIndex::singletons(&t);
        (t, idx)
    }

    fn fixed_clustering(index: &IdentityIndex, labels: Vec<usize>, k: usize) -> Clustering {
        let mut sizes = vec![0; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        Clustering {
            identity_ids: index.identities().iter().map(|i| i.id.clone()).collect(),
            labels,
            centroids: DMatrix::zeros(k, 1),
            sizes,
            inertia: 0.0,
            inertia_history: vec![0.0],
            iterations: 0,
            converged: true,
        }
    }

    fn scores(weights: Vec<f64>) -> ClusterScores {
        ClusterScores {
            fids: vec![0.0; weights.len()],
            weights,
            image_counts: vec![],
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_weights(&[3.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        let w = softmax_weights(&[100.0, 101.0]).unwrap();
        let e = (-1.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.7311).abs() < 1e-4 && (w[1] - 0.2689).abs() < 1e-4);
        let w = softmax_weights(&[99.51, 170.80]).unwrap();
        assert!(w[0] >= 1.0 - 1e-30);
        assert!(w[1] > 0.0);
    }

    #[test]
    fn softmax_infinite_and_invalid() {
        let w = softmax_weights(&[f64::INFINITY, 2.0, 2.0]).unwrap();
        assert_eq!(w, vec![0.0, 0.5, 0.5]);
        assert!(matches!(
            softmax_weights(&[f64::INFINITY, f64::INFINITY]),
            Err(SearchError::AllUnscorable)
        ));
        assert!(matches!(
            softmax_weights(&[f64::NAN]),
            Err(SearchError::InvalidFid { .. })
        ));
    }

    #[test]
    fn exhaustive_draw_takes_everything() {
        let (t, idx) = singleton_pool(10);
        let c = fixed_clustering(&idx, vec![0; 10], 1);
        for seed in 0..5 {
            let mut rng = stream_rng(seed, Stream::Sampling);
            let sel = sample_training_set(&scores(vec![1.0]), &c, &idx, 10, &mut rng).unwrap();
            let mut ids = sel.image_ids(&t);
            ids.sort();
            assert_eq!(ids, t.ids().to_vec());
        }
    }

    #[test]
    fn zero_weight_cluster_excluded() {
        let (_, idx) = singleton_pool(10);
        let c = fixed_clustering(&idx, (0..10).map(|i| i % 2).collect(), 2);
        for seed in 0..20 {
            let mut rng = stream_rng(seed, Stream::Sampling);
            let sel = sample_training_set(&scores(vec![1.0, 0.0]), &c, &idx, 3, &mut rng).unwrap();
            assert!(sel.draws.iter().all(|d| d.group == 0));
        }
        let mut rng = stream_rng(0, Stream::Sampling);
        assert!(matches!(
            sample_training_set(&scores(vec![1.0, 0.0]), &c, &idx, 6, &mut rng),
            Err(SearchError::NotEnoughImages { requested: 6, available: 5 })
        ));
        assert!(matches!(
            sample_training_set(&scores(vec![1.0, 0.0]), &c, &idx, 0, &mut rng),
            Err(SearchError::ZeroN)
        ));
    }

    #[test]
    fn last_identity_is_truncated() {
        let t = FeatureTable::new(
            (0..6).map(|i| format!("i{i}")).collect(),
            (0..6).map(|i| i as f32).collect(),
            1,
        )
        .unwrap();
        let idx = IdentityIndex::parse_manifest(
            "a\ti0\na\ti1\na\ti2\nb\ti3\nb\ti4\nb\ti5\n",
            &t,
        )
        .unwrap();
        for seed in 0..10 {
            let mut rng = stream_rng(seed, Stream::Sampling);
            let sel = random_selection(&idx, 4, &mut rng).unwrap();
            assert_eq!(sel.rows().len(), 4);
            assert_eq!(sel.draws.len(), 2);
            assert_eq!(sel.draws[0].rows.len(), 3);
            assert_eq!(sel.draws[1].rows.len(), 1);
        }
    }

    /// Exact expected number of draws from cluster 0 under sequential
    /// renormalized sampling, by dynamic programming over (a, b) counts.
    fn expected_cluster0(w0: f64, w1: f64, size: usize, n: usize) -> f64 {
        let (m0, m1) = (w0 / size as f64, w1 / size as f64);
        let mut prob = vec![vec![0.0; n + 1]; n + 1];
        prob[0][0] = 1.0;
        let mut expected = 0.0;
        for step in 0..n {
            for a in 0..=step {
                let b = step - a;
                let p = prob[a][b];
                if p == 0.0 {
                    continue;
                }
                let t0 = m0 * (size - a) as f64;
                let t1 = m1 * (size - b) as f64;
                let p0 = t0 / (t0 + t1);
                prob[a + 1][b] += p * p0;
                prob[a][b + 1] += p * (1.0 - p0);
            }
        }
        for a in 0..=n {
            expected += a as f64 * prob[a][n - a];
        }
        expected
    }

    #[test]
    fn monte_carlo_cluster_share() {
        let (_, idx) = singleton_pool(100);
        let c = fixed_clustering(&idx, (0..100).map(|i| i / 50).collect(), 2);
        let s = scores(vec![0.8, 0.2]);
        let seeds = 2000;
        let mut total = 0usize;
        for seed in 0..seeds {
            let mut rng = stream_rng(seed, Stream::Sampling);
            let sel = sample_training_set(&s, &c, &idx, 10, &mut rng).unwrap();
            total += sel.draws.iter().filter(|d| d.group == 0).count();
        }
        let mean = total as f64 / seeds as f64;
        let exact = expected_cluster0(0.8, 0.2, 50, 10);
        assert!((7.5..=8.5).contains(&mean), "{mean}");
        // Binomial-like spread: sd per run <= sqrt(10 * 0.25), so 4 SE ~ 0.15.
        assert!((mean - exact).abs() < 0.15, "{mean} vs {exact}");
    }

    proptest! {
        #[test]
        fn softmax_contract(fids in proptest::collection::vec(0.0f64..500.0, 1..20), shift in -50.0f64..50.0) {
            let w = softmax_weights(&fids).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            let shifted: Vec<f64> = fids.iter().map(|f| f + shift).collect();
            let ws = softmax_weights(&shifted).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            for i in 0..fids.len() {
                for j in 0..fids.len() {
                    if fids[j] - fids[i] > 1e-12 {
                        prop_assert!(w[i] > w[j]);
                    }
                }
            }
        }

        #[test]
        fn selection_has_exact_size_and_no_duplicates(
            sizes in proptest::collection::vec(1usize..4, 2..15),
            weights in proptest::collection::vec(0.0f64..1.0, 3),
            n_frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let total: usize = sizes.iter().sum();
            let ids: Vec<String> = (0..total).map(|i| format!("i{i:03}")).collect();
            let t = FeatureTable::new(ids.clone(), vec![0.0; total], 1).unwrap();
            let mut text = String::new();
            let mut next = 0;
            for (p, &s) in sizes.iter().enumerate() {
                for _ in 0..s {
                    text.push_str(&format!("p{p:02}\t{}\n", ids[next]));
                    next += 1;
                }
            }
            let idx = IdentityIndex::parse_manifest(&text, &t).unwrap();
            let labels: Vec<usize> = (0..idx.len()).map(|i| i % 3).collect();
            let k = labels.iter().max().unwrap() + 1;
            let c = fixed_clustering(&idx, labels, k);
            let mut w: Vec<f64> = weights[..k].iter().map(|x| x + 0.01).collect();
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= z);
            let n = ((total as f64 * n_frac) as usize).max(1);
            let mut rng = stream_rng(seed, Stream::Sampling);
            let sel = sample_training_set(&scores(w), &c, &idx, n, &mut rng).unwrap();
            let rows = sel.rows();
            prop_assert_eq!(rows.len(), n);
            let unique: std::collections::BTreeSet<_> = rows.iter().collect();
            prop_assert_eq!(unique.len(), n);
            prop_assert!(sel.draws.iter().all(|d| d.mass > 0.0));
        }
    }
}

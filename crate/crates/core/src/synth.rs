//! Synthetic biased populations with known subgroup membership.
//!
//! Each group is a Gaussian. An identity's mean is drawn from its group's
//! distribution, and each of its images adds jitter with 10% of the group
//! covariance. Every identity carries a `group=<name>` attribute.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureTable, IdentityIndex};
use crate::fid::{psd_sqrt, FidError, GaussianStats};
use crate::rng::{stream_rng, Stream};

/// Fraction of the group covariance used for per-image jitter.
pub const IMAGE_JITTER: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid population spec: {0}")]
    Invalid(String),
    #[error("group {group:?}: covariance is not positive semi-definite ({source})")]
    NotPsd {
        group: String,
        #[source]
        source: FidError,
    },
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Group covariance: a scalar variance, a diagonal, or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub proportion: f64,
    pub mean: Vec<f64>,
    pub cov: CovSpec,
    pub identities: usize,
    #[serde(default = "one")]
    pub images_per_identity: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub dim: usize,
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
    /// Prepended to every identity and image ID.
    #[serde(default)]
    pub id_prefix: String,
}

/// Splits `total` into integer counts proportional to `proportions` by the
/// largest-remainder rule (ties go to the earlier group).
pub fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &g in order.iter().take(short) {
        counts[g] += 1;
    }
    counts
}

enum Transform {
    Scale(f64),
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Transform {
    /// Maps standard-normal rows `z` (n x d) to rows with the target covariance.
    fn apply(&self, z: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Transform::Scale(s) => z * *s,
            Transform::Diagonal(s) => {
                let mut z = z;
                for (j, &sj) in s.iter().enumerate() {
                    z.column_mut(j).iter_mut().for_each(|v| *v *= sj);
                }
                z
            }
            // Symmetric square root, so z * root has covariance root * root.
            Transform::Full(root) => z * root,
        }
    }
}

impl GroupSpec {
    fn cov_matrix(&self, dim: usize) -> DMatrix<f64> {
        match &self.cov {
            CovSpec::Isotropic(v) => DMatrix::identity(dim, dim) * *v,
            CovSpec::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            CovSpec::Full(rows) => DMatrix::from_fn(dim, dim, |i, j| rows[i][j]),
        }
    }

    fn transform(&self, dim: usize, scale: f64) -> Result<Transform, SynthError> {
        let not_psd = |v: f64| SynthError::NotPsd {
            group: self.name.clone(),
            source: FidError::NotPsd { min_eigenvalue: v },
        };
        Ok(match &self.cov {
            CovSpec::Isotropic(v) if *v < 0.0 => return Err(not_psd(*v)),
            CovSpec::Isotropic(v) => Transform::Scale((v * scale).sqrt()),
            CovSpec::Diagonal(d) => {
                if let Some(&v) = d.iter().find(|v| **v < 0.0) {
                    return Err(not_psd(v));
                }
                Transform::Diagonal(d.iter().map(|v| (v * scale).sqrt()).collect())
            }
            CovSpec::Full(_) => {
                let cov = self.cov_matrix(dim);
                // Validates symmetry and PSD-ness.
                GaussianStats::new(DVector::zeros(dim), cov.clone(), 2).map_err(|source| {
                    SynthError::NotPsd {
                        group: self.name.clone(),
                        source,
                    }
                })?;
                Transform::Full(psd_sqrt(&(cov * scale)).map_err(|source| SynthError::NotPsd {
                    group: self.name.clone(),
                    source,
                })?)
            }
        })
    }
}

impl PopulationSpec {
    pub fn total_identities(&self) -> usize {
        self.groups.iter().map(|g| g.identities).sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        if self.id_prefix.contains(['\t', '\n', '\r']) {
            return bad("id_prefix contains a tab or line break".into());
        }
        let mut names = BTreeSet::new();
        for g in &self.groups {
            if g.name.is_empty() || g.name.contains(['\t', '\n', '\r', ' ']) {
                return bad(format!("group name {:?} is empty or has whitespace", g.name));
            }
            if !names.insert(&g.name) {
                return bad(format!("duplicate group name {:?}", g.name));
            }
            if !(g.proportion > 0.0) {
                return bad(format!("group {:?}: proportion must be positive", g.name));
            }
            if g.identities == 0 || g.images_per_identity == 0 {
                return bad(format!("group {:?}: counts must be at least 1", g.name));
            }
            if g.mean.len() != self.dim || g.mean.iter().any(|v| !v.is_finite()) {
                return bad(format!(
                    "group {:?}: mean must have {} finite entries",
                    g.name, self.dim
                ));
            }
            let ok = match &g.cov {
                CovSpec::Isotropic(v) => v.is_finite(),
                CovSpec::Diagonal(d) => d.len() == self.dim && d.iter().all(|v| v.is_finite()),
                CovSpec::Full(rows) => {
                    rows.len() == self.dim
                        && rows
                            .iter()
                            .all(|r| r.len() == self.dim && r.iter().all(|v| v.is_finite()))
                }
            };
            if !ok {
                return bad(format!(
                    "group {:?}: covariance must be finite and match dim {}",
                    g.name, self.dim
                ));
            }
        }
        let sum: f64 = self.groups.iter().map(|g| g.proportion).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("proportions sum to {sum}, expected 1"));
        }
        let total = self.total_identities() as f64;
        for g in &self.groups {
            if (g.identities as f64 - g.proportion * total).abs() >= 1.0 {
                return bad(format!(
                    "group {:?}: {} identities is inconsistent with proportion {} of {}",
                    g.name, g.identities, g.proportion, total
                ));
            }
        }
        Ok(())
    }
}

/// A generated population.
#[derive(Debug, Clone)]
pub struct Population {
    pub table: FeatureTable,
    pub index: IdentityIndex,
}

impl Population {
    /// Table rows whose identity belongs to `group`.
    pub fn group_rows(&self, group: &str) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .index
            .identities()
            .iter()
            .filter(|i| i.attrs.get("group").map(String::as_str) == Some(group))
            .flat_map(|i| i.rows.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

fn normals(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row by row so the stream order does not depend on storage layout.
    let mut z = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            z[(i, j)] = StandardNormal.sample(rng);
        }
    }
    z
}

/// Generates the population described by `spec`, deterministically in its seed.
pub fn generate(spec: &PopulationSpec) -> Result<Population, SynthError> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = stream_rng(spec.seed, Stream::Synthesis);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut groups = Vec::new();
    for g in &spec.groups {
        let spread = g.transform(d, 1.0)?;
        let jitter = g.transform(d, IMAGE_JITTER)?;
        let mean = DVector::from_column_slice(&g.mean);
        let centres = spread.apply(normals(&mut rng, g.identities, d));
        let offsets = jitter.apply(normals(&mut rng, g.identities * g.images_per_identity, d));
        for i in 0..g.identities {
            let identity = format!("{}{}-{:06}", spec.id_prefix, g.name, i);
            let mut images = Vec::with_capacity(g.images_per_identity);
            for j in 0..g.images_per_identity {
                let r = i * g.images_per_identity + j;
                let image = format!("{identity}-{j}");
                for c in 0..d {
                    data.push((mean[c] + centres[(i, c)] + offsets[(r, c)]) as f32);
                }
                ids.push(image.clone());
                images.push(image);
            }
            let attrs = BTreeMap::from([("group".to_string(), g.name.clone())]);
            groups.push((identity, images, attrs));
        }
    }
    let table = FeatureTable::new(ids, data, d)?;
    let index = IdentityIndex::from_groups(&table, groups)?;
    Ok(Population { table, index })
}

/// FairSeg-like racial composition of the pool (7,608 / 1,473 / 919 of 10,000).
pub const FAIRSEG_PROPORTIONS: [(&str, f64); 3] = [
    ("majority", 0.7608),
    ("minority", 0.1473),
    ("second_minority", 0.0919),
];

/// Group whose distribution the standard target is drawn from.
pub const TARGET_GROUP: &str = "minority";

/// Shape of the standard biased fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub pool_identities: usize,
    pub target_identities: usize,
    pub dim: usize,
    /// Distance between any two group means.
    pub separation: f64,
    /// Mean per-feature variance within a group.
    pub variance: f64,
    /// Feature `j` gets variance proportional to `(j + 1)^-decay`; 0 is isotropic.
    pub decay: f64,
    pub images_per_identity: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            pool_identities: 8000,
            target_identities: 300,
            dim: 64,
            separation: 10.0,
            variance: 1.0,
            decay: 1.0,
            images_per_identity: 1,
            seed: 0,
        }
    }
}

fn group_mean(dim: usize, axis: usize, separation: f64) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    mean[axis % dim] = separation / std::f64::consts::SQRT_2;
    mean
}

fn group_cov(cfg: &FixtureConfig) -> CovSpec {
    if cfg.decay == 0.0 {
        return CovSpec::Isotropic(cfg.variance);
    }
    let raw: Vec<f64> = (0..cfg.dim).map(|j| ((j + 1) as f64).powf(-cfg.decay)).collect();
    let scale = cfg.variance * cfg.dim as f64 / raw.iter().sum::<f64>();
    CovSpec::Diagonal(raw.into_iter().map(|v| v * scale).collect())
}

fn groups_for(cfg: &FixtureConfig, shares: &[(&str, f64)], total: usize) -> Vec<GroupSpec> {
    let counts = apportion(total, &shares.iter().map(|s| s.1).collect::<Vec<_>>());
    shares
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(axis, (&(name, proportion), identities))| GroupSpec {
            name: name.to_string(),
            proportion,
            mean: group_mean(cfg.dim, axis, cfg.separation),
            cov: group_cov(cfg),
            identities,
            images_per_identity: cfg.images_per_identity,
        })
        .collect()
}

/// Pool spec with FairSeg proportions; group means sit on orthogonal axes.
pub fn standard_pool_spec(cfg: &FixtureConfig) -> PopulationSpec {
    PopulationSpec {
        dim: cfg.dim,
        seed: cfg.seed,
        groups: groups_for(cfg, &FAIRSEG_PROPORTIONS, cfg.pool_identities),
        id_prefix: String::new(),
    }
}

/// Pool spec with a 80/20 majority/minority split.
pub fn two_group_pool_spec(cfg: &FixtureConfig) -> PopulationSpec {
    PopulationSpec {
        dim: cfg.dim,
        seed: cfg.seed,
        groups: groups_for(cfg, &[("majority", 0.8), (TARGET_GROUP, 0.2)], cfg.pool_identities),
        id_prefix: String::new(),
    }
}

/// Target spec: fresh draws from the minority group only.
pub fn target_spec(cfg: &FixtureConfig) -> PopulationSpec {
    let mut group = groups_for(cfg, &FAIRSEG_PROPORTIONS, cfg.target_identities)
        .into_iter()
        .find(|g| g.name == TARGET_GROUP)
        .unwrap();
    group.proportion = 1.0;
    group.identities = cfg.target_identities;
    PopulationSpec {
        dim: cfg.dim,
        seed: cfg.seed ^ 0x7a29_e7c1_3d5f_0b61,
        groups: vec![group],
        id_prefix: "target-".into(),
    }
}

/// A pool plus a target drawn from its minority group.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub pool: Population,
    pub target: Population,
}

pub fn standard_fixture(cfg: &FixtureConfig) -> Result<Fixture, SynthError> {
    Ok(Fixture {
        pool: generate(&standard_pool_spec(cfg))?,
        target: generate(&target_spec(cfg))?,
    })
}

pub fn two_group_fixture(cfg: &FixtureConfig) -> Result<Fixture, SynthError> {
    Ok(Fixture {
        pool: generate(&two_group_pool_spec(cfg))?,
        target: generate(&target_spec(cfg))?,
    })
}

//! Seeded comparisons of the greedy search against uniform sampling, and
//! sweeps over the number of clusters.
//!
//! Reports are a CSV of per-run rows (`strategy,k,n,seed,fid`) plus a JSON
//! summary holding the per-configuration mean and sample standard deviation.
//! Rows are always emitted in `(strategy, n, k, seed)` order so output bytes
//! do not depend on scheduling.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::features::{FeatureTable, IdentityIndex};
use crate::search::{
    prepare_greedy, sample_prepared, sample_random, selection_fid, target_stats, SearchError,
    SearchParams, Strategy,
};

pub const CSV_HEADER: &str = "strategy,k,n,seed,fid";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    /// Number of clusters; 0 for the random baseline, which has none.
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub fid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub strategy: Strategy,
    pub k: usize,
    pub n: usize,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `runs - 1`); 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Report {
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| {
            (a.strategy, a.n, a.k, a.seed)
                .cmp(&(b.strategy, b.n, b.k, b.seed))
        });
        let mut aggregates = Vec::new();
        for chunk in rows.chunk_by(|a, b| (a.strategy, a.n, a.k) == (b.strategy, b.n, b.k)) {
            let fids: Vec<f64> = chunk.iter().map(|r| r.fid).collect();
            let (mean, std) = mean_std(&fids);
            aggregates.push(Aggregate {
                strategy: chunk[0].strategy,
                k: chunk[0].k,
                n: chunk[0].n,
                runs: chunk.len(),
                mean,
                std,
            });
        }
        Self { rows, aggregates }
    }

    pub fn aggregate(&self, strategy: Strategy, k: usize, n: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.strategy == strategy && a.k == k && a.n == n)
    }

    pub fn fid(&self, strategy: Strategy, k: usize, n: usize, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.k == k && r.n == n && r.seed == seed)
            .map(|r| r.fid)
    }

    /// Cluster count with the lowest mean greedy FID at `n`.
    pub fn best_k(&self, n: usize) -> Option<usize> {
        self.aggregates
            .iter()
            .filter(|a| a.strategy == Strategy::Greedy && a.n == n)
            .min_by(|a, b| a.mean.total_cmp(&b.mean))
            .map(|a| a.k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.strategy, r.k, r.n, r.seed, r.fid);
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            runs: usize,
            aggregates: &'a [Aggregate],
        }
        let mut s = serde_json::to_string_pretty(&Summary {
            runs: self.rows.len(),
            aggregates: &self.aggregates,
        })
        .expect("summary serializes");
        s.push('\n');
        s
    }
}

/// For every seed, runs the greedy search (clustering once, sampling once per
/// `n`) and the random baseline, and records each selection's FID to the
/// target.
pub fn compare_strategies(
    pool: &FeatureTable,
    pool_index: &IdentityIndex,
    target: &FeatureTable,
    base: &SearchParams,
    n_list: &[usize],
    seeds: &[u64],
) -> Result<Report, SearchError> {
    let stats = target_stats(target)?;
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let params = SearchParams {
                seed,
                ..base.clone()
            };
            let (clustering, scores) = prepare_greedy(pool, pool_index, &stats, &params)?;
            let mut rows = Vec::with_capacity(2 * n_list.len());
            for &n in n_list {
                let greedy = sample_prepared(&clustering, &scores, pool_index, n, seed)?;
                rows.push(ReportRow {
                    strategy: Strategy::Greedy,
                    k: base.k,
                    n,
                    seed,
                    fid: selection_fid(pool, &greedy.rows(), &stats)?,
                });
                let random = sample_random(pool_index, n, seed)?;
                rows.push(ReportRow {
                    strategy: Strategy::Random,
                    k: 0,
                    n,
                    seed,
                    fid: selection_fid(pool, &random.rows(), &stats)?,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    Ok(Report::from_rows(per_seed.into_iter().flatten().collect()))
}

/// Greedy-search FID for every `k` in `k_list` and every seed at fixed `n`.
pub fn sweep_k(
    pool: &FeatureTable,
    pool_index: &IdentityIndex,
    target: &FeatureTable,
    base: &SearchParams,
    k_list: &[usize],
    n: usize,
    seeds: &[u64],
) -> Result<Report, SearchError> {
    let stats = target_stats(target)?;
    let jobs: Vec<(usize, u64)> = k_list
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let params = SearchParams {
                k,
                seed,
                ..base.clone()
            };
            let (clustering, scores) = prepare_greedy(pool, pool_index, &stats, &params)?;
            let sel = sample_prepared(&clustering, &scores, pool_index, n, seed)?;
            Ok(ReportRow {
                strategy: Strategy::Greedy,
                k,
                n,
                seed,
                fid: selection_fid(pool, &sel.rows(), &stats)?,
            })
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    Ok(Report::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: Strategy, k: usize, n: usize, seed: u64, fid: f64) -> ReportRow {
        ReportRow {
            strategy,
            k,
            n,
            seed,
            fid,
        }
    }

    #[test]
    fn rows_sorted_and_aggregated() {
        let report = Report::from_rows(vec![
            row(Strategy::Random, 0, 10, 1, 4.0),
            row(Strategy::Greedy, 5, 10, 1, 1.0),
            row(Strategy::Greedy, 5, 10, 0, 3.0),
            row(Strategy::Random, 0, 10, 0, 6.0),
        ]);
        assert_eq!(report.rows[0].seed, 0);
        assert_eq!(report.rows[0].strategy, Strategy::Greedy);
        let g = report.aggregate(Strategy::Greedy, 5, 10).unwrap();
        assert_eq!(g.mean, 2.0);
        assert!((g.std - 2f64.sqrt()).abs() < 1e-15);
        let csv = report.to_csv();
        assert!(csv.starts_with("strategy,k,n,seed,fid\ngreedy,5,10,0,3\n"));
    }

    #[test]
    fn single_run_has_zero_std() {
        assert_eq!(mean_std(&[2.5]), (2.5, 0.0));
    }
}

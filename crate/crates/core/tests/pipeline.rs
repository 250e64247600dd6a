use std::collections::{BTreeMap, BTreeSet, HashMap};

use fidsearch_core::eval::{compare_strategies, mean_std, sweep_k};
use fidsearch_core::features::{FeatureTable, IdentityIndex};
use fidsearch_core::search::{run_search, SearchParams, Strategy};
use fidsearch_core::synth::{
    generate, two_group_fixture, CovSpec, FixtureConfig, GroupSpec, Population, PopulationSpec,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn group(name: &str, proportion: f64, mean: Vec<f64>, identities: usize) -> GroupSpec {
    GroupSpec {
        name: name.into(),
        proportion,
        mean,
        cov: CovSpec::Isotropic(1.0),
        identities,
        images_per_identity: 1,
    }
}

fn axis(dim: usize, at: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[at] = value;
    v
}

fn single_gaussian(identities: usize, dim: usize, seed: u64, prefix: &str) -> Population {
    generate(&PopulationSpec {
        dim,
        seed,
        groups: vec![group("all", 1.0, vec![0.0; dim], identities)],
        id_prefix: prefix.into(),
    })
    .unwrap()
}

fn params(k: usize, n: usize, seed: u64) -> SearchParams {
    SearchParams {
        k,
        n,
        seed,
        ..SearchParams::default()
    }
}

#[test]
fn half_and_half_pool_draws_from_target_half() {
    let dim = 16;
    let pool = generate(&PopulationSpec {
        dim,
        seed: 11,
        groups: vec![
            group("a", 0.5, axis(dim, 0, 6.0), 200),
            group("b", 0.5, axis(dim, 1, 6.0), 200),
        ],
        id_prefix: String::new(),
    })
    .unwrap();
    let target = generate(&PopulationSpec {
        dim,
        seed: 12,
        groups: vec![group("a", 1.0, axis(dim, 0, 6.0), 100)],
        id_prefix: "t-".into(),
    })
    .unwrap();
    let from_a: BTreeSet<usize> = pool.group_rows("a").into_iter().collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let out = run_search(
            &pool.table,
            &pool.index,
            &target.table,
            &params(2, 20, seed),
            BTreeMap::new(),
        )
        .unwrap();
        let rows = out.selection.rows();
        assert_eq!(rows.len(), 20);
        hits += rows.iter().filter(|r| from_a.contains(r)).count();
        total += rows.len();
    }
    assert!(hits as f64 >= 0.9 * total as f64, "{hits}/{total} from the target half");
}

#[test]
fn single_cluster_sampling_is_uniform() {
    let pool = single_gaussian(20, 3, 5, "");
    let target = single_gaussian(30, 3, 6, "t-");
    let (runs, n) = (2000u64, 5usize);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for seed in 0..runs {
        let out = run_search(
            &pool.table,
            &pool.index,
            &target.table,
            &params(1, n, seed),
            BTreeMap::new(),
        )
        .unwrap();
        for id in out.manifest.selected_ids {
            *counts.entry(id).or_default() += 1;
        }
    }
    let expected = (runs as usize * n) as f64 / 20.0;
    let stat: f64 = pool
        .table
        .ids()
        .iter()
        .map(|id| {
            let c = *counts.get(id).unwrap_or(&0) as f64;
            (c - expected).powi(2) / expected
        })
        .sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}");
}

#[test]
fn whole_pool_single_cluster_selects_everything() {
    let pool = single_gaussian(40, 4, 1, "");
    let target = single_gaussian(20, 4, 2, "t-");
    for seed in 0..3 {
        let out = run_search(
            &pool.table,
            &pool.index,
            &target.table,
            &params(1, 40, seed),
            BTreeMap::new(),
        )
        .unwrap();
        let got: BTreeSet<&str> = out.manifest.selected_ids.iter().map(String::as_str).collect();
        let all: BTreeSet<&str> = pool.table.ids().iter().map(String::as_str).collect();
        assert_eq!(got, all);
    }
}

#[test]
fn whole_pool_greedy_and_random_agree() {
    let pool = single_gaussian(200, 4, 3, "");
    let target = single_gaussian(50, 4, 4, "t-");
    let report = compare_strategies(
        &pool.table,
        &pool.index,
        &target.table,
        &params(4, 200, 0),
        &[200],
        &[0, 1, 2],
    )
    .unwrap();
    for seed in 0..3 {
        let g = report.fid(Strategy::Greedy, 4, 200, seed).unwrap();
        let r = report.fid(Strategy::Random, 0, 200, seed).unwrap();
        assert!((g - r).abs() <= 1e-9 * (1.0 + r), "{g} vs {r}");
    }
}

#[test]
fn one_cluster_sweep_matches_random_baseline() {
    let fx = two_group_fixture(&FixtureConfig {
        pool_identities: 1000,
        target_identities: 200,
        dim: 8,
        ..FixtureConfig::default()
    })
    .unwrap();
    let seeds: Vec<u64> = (0..40).collect();
    let base = params(1, 100, 0);
    let sweep = sweep_k(&fx.pool.table, &fx.pool.index, &fx.target.table, &base, &[1], 100, &seeds)
        .unwrap();
    let cmp = compare_strategies(&fx.pool.table, &fx.pool.index, &fx.target.table, &base, &[100], &seeds)
        .unwrap();
    let g = sweep.aggregate(Strategy::Greedy, 1, 100).unwrap();
    let r = cmp.aggregate(Strategy::Random, 0, 100).unwrap();
    let se = ((g.std.powi(2) + r.std.powi(2)) / seeds.len() as f64).sqrt();
    assert!((g.mean - r.mean).abs() < 4.0 * se, "{} vs {} (se {se})", g.mean, r.mean);
}

#[test]
fn two_group_sweep_prefers_more_than_one_cluster() {
    let fx = two_group_fixture(&FixtureConfig {
        pool_identities: 4000,
        target_identities: 300,
        dim: 32,
        ..FixtureConfig::default()
    })
    .unwrap();
    let ks = [1, 2, 4, 8, 16];
    let seeds: Vec<u64> = (0..5).collect();
    let report = sweep_k(
        &fx.pool.table,
        &fx.pool.index,
        &fx.target.table,
        &SearchParams::default(),
        &ks,
        300,
        &seeds,
    )
    .unwrap();
    let best = report.best_k(300).unwrap();
    let mean = |k| report.aggregate(Strategy::Greedy, k, 300).unwrap().mean;
    assert!(best >= 2);
    assert!(mean(best) < mean(1));
}

#[test]
fn one_cluster_per_identity_scores_only_large_clusters() {
    // Identities alternate between one and three images.
    let (dim, m) = (3, 30);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut groups = Vec::new();
    for i in 0..m {
        let images = if i % 2 == 0 { 1 } else { 3 };
        let mut names = Vec::new();
        for j in 0..images {
            let name = format!("img{i:02}-{j}");
            ids.push(name.clone());
            names.push(name);
            data.extend([i as f32, (i * i % 7) as f32 + 0.1 * j as f32, (j * j) as f32 * 0.05]);
        }
        groups.push((format!("id{i:02}"), names, BTreeMap::new()));
    }
    let table = FeatureTable::new(ids, data, dim).unwrap();
    let index = IdentityIndex::from_groups(&table, groups).unwrap();
    let target = single_gaussian(20, dim, 9, "t-");
    let out = run_search(&table, &index, &target.table, &params(m, 6, 0), BTreeMap::new()).unwrap();
    let man = &out.manifest;
    assert_eq!(man.cluster_sizes, vec![1; m]);
    for c in 0..m {
        let scored = man.cluster_fids[c].is_some();
        assert_eq!(scored, man.cluster_images[c] >= 2, "cluster {c}");
        if !scored {
            assert_eq!(man.weights[c], 0.0);
        }
    }
    for id in &man.selected_ids {
        let owner = index.identities().iter().find(|i| i.rows.iter().any(|&r| table.ids()[r] == *id));
        assert_eq!(owner.unwrap().rows.len(), 3);
    }

    let pairs = generate(&PopulationSpec {
        dim,
        seed: 4,
        groups: vec![GroupSpec {
            images_per_identity: 2,
            ..group("all", 1.0, vec![0.0; dim], 24)
        }],
        id_prefix: String::new(),
    })
    .unwrap();
    let report = sweep_k(
        &pairs.table,
        &pairs.index,
        &target.table,
        &SearchParams::default(),
        &[24],
        10,
        &[0, 1],
    )
    .unwrap();
    assert!(report.rows.iter().all(|r| r.fid.is_finite()));
}

#[test]
fn aggregates_recompute_from_rows() {
    let fx = two_group_fixture(&FixtureConfig {
        pool_identities: 600,
        target_identities: 100,
        dim: 6,
        ..FixtureConfig::default()
    })
    .unwrap();
    let report = compare_strategies(
        &fx.pool.table,
        &fx.pool.index,
        &fx.target.table,
        &params(8, 50, 0),
        &[50, 120],
        &[3, 4, 5, 6],
    )
    .unwrap();
    assert_eq!(report.aggregates.len(), 4);
    for a in &report.aggregates {
        let fids: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.strategy == a.strategy && r.k == a.k && r.n == a.n)
            .map(|r| r.fid)
            .collect();
        assert_eq!(fids.len(), a.runs);
        let n = fids.len() as f64;
        let mean = fids.iter().sum::<f64>() / n;
        let std = (fids.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((a.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        assert!((a.std - std).abs() <= 1e-9 * (1.0 + std));
        assert_eq!(mean_std(&fids), (a.mean, a.std));
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let fx = two_group_fixture(&FixtureConfig {
        pool_identities: 800,
        target_identities: 100,
        dim: 8,
        ..FixtureConfig::default()
    })
    .unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cmp = compare_strategies(
                &fx.pool.table,
                &fx.pool.index,
                &fx.target.table,
                &params(6, 80, 0),
                &[40, 80],
                &[0, 1, 2, 3],
            )
            .unwrap();
            let sweep = sweep_k(
                &fx.pool.table,
                &fx.pool.index,
                &fx.target.table,
                &SearchParams::default(),
                &[1, 3, 9],
                80,
                &[7, 8],
            )
            .unwrap();
            let search = run_search(
                &fx.pool.table,
                &fx.pool.index,
                &fx.target.table,
                &params(6, 80, 5),
                BTreeMap::new(),
            )
            .unwrap();
            (cmp.to_csv(), cmp.summary_json(), sweep.to_csv(), search.manifest.to_json())
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn random_strategy_manifest_has_no_clusters() {
    let pool = single_gaussian(50, 4, 1, "");
    let target = single_gaussian(20, 4, 2, "t-");
    let p = SearchParams {
        strategy: Strategy::Random,
        ..params(5, 12, 3)
    };
    let out = run_search(&pool.table, &pool.index, &target.table, &p, BTreeMap::new()).unwrap();
    assert!(out.manifest.cluster_fids.is_empty());
    assert_eq!(out.manifest.selected_ids.len(), 12);
    let text = out.manifest.to_json();
    assert_eq!(
        fidsearch_core::SearchManifest::from_json(&text).unwrap(),
        out.manifest
    );
}

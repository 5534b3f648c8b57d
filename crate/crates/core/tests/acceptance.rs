//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line (run with `cargo test --test acceptance -- --nocapture`
//! to see them). Every tolerance is pinned in code; each criterion also
//! enforces its runtime budget.

mod common;

use std::time::Instant;

use common::adaptive_simpson;
use extremix::fit::{
    build_likelihood_matrices, dsga_fit_beta, dsga_gradient, dsga_objective, fit_all_edge_gammas,
    fit_edge_gamma, DsgaConfig,
};
use extremix::graphs::{
    build_lattice, enumerate_spanning_trees, laplacian_minor_det, max_product_spanning_tree,
    EdgeWeightMatrix, SpanningTree, TreeEnsemble, VariogramEdgeMap,
};
use extremix::hr::{bivariate_v, chi_hr, hr_intensity, VariogramMatrix};
use extremix::margins::{fit_pooled_gpd, GpdParams, MarginalModel};
use extremix::mixture::{
    chi_mixture, fit_bias_scale, log_mixture_density_det, log_mixture_density_explicit,
    pairs_within_graph_distance, TreeMixtureModel,
};
use extremix::pipeline::PipelineConfig;
use extremix::simulate::{
    generate_synthetic_dataset, sample_mpd_tree, sample_tree_hr_rooted, DependenceSpec,
    SyntheticMargins, SyntheticSpec,
};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn report(id: u32, name: &str, start: Instant, budget_s: f64, detail: String) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < budget_s,
        "ACCEPTANCE {id} [{name}]: FAIL (runtime {elapsed:.1}s over budget {budget_s}s)"
    );
    println!("ACCEPTANCE {id} [{name}]: PASS ({detail}, {elapsed:.1}s)");
}

fn random_connected_graph(
    rng: &mut Xoshiro256PlusPlus,
    max_nodes: usize,
) -> (usize, Vec<(usize, usize)>) {
    let n = rng.gen_range(3..=max_nodes);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if i + 1 == j || rng.gen_bool(0.55) {
                edges.push((i, j));
            }
        }
    }
    (n, edges)
}

#[test]
fn criterion_01_matrix_tree_oracle() {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (n, edges) = random_connected_graph(&mut rng, 8);
        let weights: Vec<f64> = (0..edges.len())
            .map(|_| rng.gen_range(1e-6..2.0f64))
            .collect();
        let beta = EdgeWeightMatrix::new(n, &edges, weights.clone()).unwrap();
        let det = laplacian_minor_det(&beta).unwrap();
        let mut brute = 0.0;
        for tree in enumerate_spanning_trees(n, &edges).unwrap() {
            brute += tree
                .edges()
                .iter()
                .map(|&(i, j)| beta.weight_of(i, j).unwrap())
                .product::<f64>();
        }
        let rel = ((det - brute) / brute).abs();
        worst = worst.max(rel);
        assert!(
            rel < 1e-10,
            "ACCEPTANCE 1 [matrix-tree oracle]: FAIL (n={n}, det {det} vs brute {brute})"
        );
    }
    report(1, "matrix-tree oracle", start, 5.0, format!("50 graphs, max rel err {worst:.2e}"));
}

#[test]
fn criterion_02_mixture_density_equivalence() {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(102);
    let cycle: Vec<(usize, usize)> = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
    let square = vec![(140.0, -30.0), (140.5, -30.0), (140.0, -29.5), (140.5, -29.5)];
    let diag_lattice = build_lattice(&square, true).unwrap().edge_pairs();
    let mut worst: f64 = 0.0;
    for edges in [cycle, diag_lattice] {
        let trees = enumerate_spanning_trees(4, &edges).unwrap();
        let gammas = VariogramEdgeMap::from_pairs(
            edges.iter().map(|&e| (e, rng.gen_range(0.3..3.0))),
        )
        .unwrap();
        let weights: Vec<f64> = (0..edges.len()).map(|_| rng.gen_range(0.2..1.5)).collect();
        let beta = EdgeWeightMatrix::new(4, &edges, weights).unwrap();
        let model = TreeMixtureModel::new(
            TreeEnsemble {
                raw_draws: trees.len(),
                trees,
            },
            gammas.clone(),
            beta.clone(),
            1.0,
        )
        .unwrap();
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..3.0)).collect();
            x[rng.gen_range(0..4)] = rng.gen_range(1.1..5.0);
            let explicit = log_mixture_density_explicit(&x, &model).unwrap();
            let det = log_mixture_density_det(&x, &gammas, &beta).unwrap();
            let rel = (explicit - det).abs() / (1.0 + explicit.abs());
            worst = worst.max(rel);
            assert!(
                rel < 1e-10,
                "ACCEPTANCE 2 [mixture-density equivalence]: FAIL at x={x:?} ({explicit} vs {det})"
            );
        }
    }
    report(
        2,
        "mixture-density equivalence",
        start,
        5.0,
        format!("200 support points, max rel err {worst:.2e}"),
    );
}

#[test]
fn criterion_03_hr_intensity() {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for n in [2usize, 3, 4] {
        let chain: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let tree = SpanningTree::new(n, chain.clone()).unwrap();
        let gammas = VariogramEdgeMap::from_pairs(
            chain.iter().map(|&e| (e, rng.gen_range(0.3..2.5))),
        )
        .unwrap();
        let gamma = VariogramMatrix::from_tree(&tree, &gammas).unwrap();
        for _ in 0..25 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..4.0)).collect();
            let base = hr_intensity(&x, &gamma, 0).unwrap();
            for k in 1..n {
                let rel = ((hr_intensity(&x, &gamma, k).unwrap() - base) / base).abs();
                worst = worst.max(rel);
                assert!(rel < 1e-10, "ACCEPTANCE 3 [hr intensity]: FAIL (anchor {k})");
            }
            let c = rng.gen_range(0.5..3.0);
            let xc: Vec<f64> = x.iter().map(|&v| c * v).collect();
            let want = c.powi(-(n as i32 + 1)) * base;
            let rel = ((hr_intensity(&xc, &gamma, 0).unwrap() - want) / want).abs();
            worst = worst.max(rel);
            assert!(rel < 1e-10, "ACCEPTANCE 3 [hr intensity]: FAIL (homogeneity)");
        }
    }
    // bivariate margin normalization by bump-tracked quadrature
    let g = 1.0;
    let w = 14.0 * 1.0 + 6.0;
    let mass = adaptive_simpson(
        &|s: f64| {
            let center = s - 0.5 * g;
            adaptive_simpson(
                &|t: f64| {
                    let gamma = VariogramMatrix::pair(g).unwrap();
                    hr_intensity(&[s.exp(), t.exp()], &gamma, 0).unwrap() * (s + t).exp()
                },
                center - w,
                center + w,
                1e-9,
            )
        },
        0.0,
        18.0,
        1e-7,
    );
    assert!(
        (mass - 1.0).abs() < 1e-4,
        "ACCEPTANCE 3 [hr intensity]: FAIL (margin mass {mass})"
    );
    report(
        3,
        "hr intensity",
        start,
        30.0,
        format!("invariances max rel err {worst:.2e}, margin mass {mass:.6}"),
    );
}

#[test]
fn criterion_04_chi_consistency_chain() {
    let start = Instant::now();
    // exact identity between the two code paths
    for i in 0..=400 {
        let g = i as f64 * 0.05;
        let lhs = chi_hr(g);
        let rhs = 2.0 - bivariate_v(1.0, 1.0, g).unwrap();
        assert!(
            lhs == rhs,
            "ACCEPTANCE 4 [chi chain]: FAIL (g={g}: {lhs} vs {rhs} not bitwise equal)"
        );
    }
    // sampler-implied chi at Gamma = 4
    let tree = SpanningTree::new(2, vec![(0, 1)]).unwrap();
    let gammas = VariogramEdgeMap::from_pairs([((0, 1), 4.0)]).unwrap();
    let samples = sample_mpd_tree(&tree, &gammas, 100_000, 104).unwrap();
    let mut x0: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let mut x1: Vec<f64> = samples.iter().map(|s| s[1]).collect();
    x0.sort_by(|a, b| a.partial_cmp(b).unwrap());
    x1.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q0 = extremix::stats::empirical_quantile(&x0, 0.99);
    let q1 = extremix::stats::empirical_quantile(&x1, 0.99);
    let n_cond = samples.iter().filter(|s| s[1] > q1).count();
    let n_both = samples.iter().filter(|s| s[0] > q0 && s[1] > q1).count();
    let chi_emp = n_both as f64 / n_cond as f64;
    let want = 0.317311;
    let se = (want * (1.0 - want) / n_cond as f64).sqrt();
    assert!(
        (chi_emp - want).abs() < 3.0 * se,
        "ACCEPTANCE 4 [chi chain]: FAIL (empirical {chi_emp} vs {want} +- {:.4})",
        3.0 * se
    );
    report(
        4,
        "chi consistency chain",
        start,
        60.0,
        format!("identity bitwise on 401 points; sampler chi {chi_emp:.4} vs {want} (3SE {:.4})", 3.0 * se),
    );
}

#[test]
fn criterion_05_gp_recovery_and_round_trip() {
    let start = Instant::now();
    // seeded GP(2, 0.1) exceedances
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(105);
    let pairs: Vec<(f64, usize)> = (0..5000)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            (2.0 / 0.1 * ((1.0 - u).powf(-0.1) - 1.0) + 1e-12, 0)
        })
        .collect();
    let fit = fit_pooled_gpd(&pairs, 0.0).unwrap();
    assert!(
        fit.params.sigma > 1.9 && fit.params.sigma < 2.1,
        "ACCEPTANCE 5 [gp recovery]: FAIL (sigma {})",
        fit.params.sigma
    );
    assert!(
        fit.params.xi > 0.05 && fit.params.xi < 0.15,
        "ACCEPTANCE 5 [gp recovery]: FAIL (xi {})",
        fit.params.xi
    );
    // tail round trip under the fitted model
    let sample: Vec<f64> = (1..=99).map(|k| k as f64).collect();
    let model = MarginalModel::new(
        95.0,
        0.05,
        GpdParams::new(fit.params.sigma, fit.params.xi).unwrap(),
        sample,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for i in 1..=50 {
        let z = 95.0 + i as f64 * 0.5;
        let back = model
            .from_unit_pareto(model.to_unit_pareto(z).unwrap())
            .unwrap();
        let err = (back - z).abs() / z.abs().max(1.0);
        worst = worst.max(err);
        assert!(
            err < 1e-10,
            "ACCEPTANCE 5 [gp recovery]: FAIL (round trip at z={z}: {back})"
        );
    }
    report(
        5,
        "gp recovery",
        start,
        10.0,
        format!(
            "sigma {:.3}, xi {:.3}, worst round-trip err {worst:.2e}",
            fit.params.sigma, fit.params.xi
        ),
    );
}

#[test]
fn criterion_06_censored_likelihood_recovery() {
    let start = Instant::now();
    let mut detail = String::new();
    for (k, &g_true) in [0.5f64, 2.0, 8.0].iter().enumerate() {
        let tree = SpanningTree::new(2, vec![(0, 1)]).unwrap();
        let gammas = VariogramEdgeMap::from_pairs([((0, 1), g_true)]).unwrap();
        let u = 20.0;
        let samples = sample_mpd_tree(&tree, &gammas, 5000, 106 + k as u64).unwrap();
        let yi: Vec<f64> = samples.iter().map(|s| u * s[0]).collect();
        let yj: Vec<f64> = samples.iter().map(|s| u * s[1]).collect();
        let fit = fit_edge_gamma(&yi, &yj, u).unwrap();
        let rel = (fit.gamma - g_true).abs() / g_true;
        assert!(
            rel < 0.15,
            "ACCEPTANCE 6 [censored recovery]: FAIL (true {g_true}, fitted {})",
            fit.gamma
        );
        detail.push_str(&format!("{g_true}->{:.3} ", fit.gamma));
    }
    report(6, "censored-likelihood recovery", start, 60.0, detail.trim().to_string());
}

fn cycle_series(seed: u64) -> extremix::fit::LikelihoodMatrixSeries {
    let tree = SpanningTree::new(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let gm = VariogramEdgeMap::constant(tree.edges(), 1.0).unwrap();
    let samples = sample_mpd_tree(&tree, &gm, 500, seed).unwrap();
    let u = 20.0;
    let panel: Vec<Vec<f64>> = (0..4)
        .map(|i| samples.iter().map(|s| u * s[i]).collect())
        .collect();
    let edges = [(0, 1), (1, 2), (2, 3), (0, 3)];
    let (gammas, _) = fit_all_edge_gammas(&panel, &edges, u).unwrap();
    build_likelihood_matrices(&panel, &edges, &gammas, u).unwrap()
}

#[test]
fn criterion_07_dsga_gradient_and_projection() {
    let start = Instant::now();
    let series = cycle_series(107);
    let batch: Vec<usize> = (0..series.n_times()).collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(107);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let eta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..0.5)).collect();
        let grad = dsga_gradient(&eta, &batch, &series, 100.0).unwrap();
        for e in 0..4 {
            let mut hi = eta.clone();
            let mut lo = eta.clone();
            hi[e] += h;
            lo[e] -= h;
            let fd = (dsga_objective(&hi, &batch, &series, 100.0)
                - dsga_objective(&lo, &batch, &series, 100.0))
                / (2.0 * h);
            let rel = (grad[e] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            assert!(
                rel < 1e-5,
                "ACCEPTANCE 7 [dsga gradient]: FAIL (edge {e}: {} vs fd {fd})",
                grad[e]
            );
        }
    }
    let fit = dsga_fit_beta(&series, &DsgaConfig::default(), 7).unwrap();
    assert!(
        fit.objective >= fit.objective_init,
        "ACCEPTANCE 7 [dsga gradient]: FAIL (objective {} below init {})",
        fit.objective,
        fit.objective_init
    );
    let norm_err = (fit.beta.upper_norm() - 1.0).abs();
    assert!(
        norm_err < 1e-12,
        "ACCEPTANCE 7 [dsga gradient]: FAIL (norm error {norm_err:.2e})"
    );
    report(
        7,
        "dsga gradient",
        start,
        60.0,
        format!(
            "max grad rel err {worst:.2e}; objective {:.2} >= init {:.2}; norm err {norm_err:.1e}",
            fit.objective, fit.objective_init
        ),
    );
}

#[test]
fn criterion_08_tree_structure_recovery() {
    let start = Instant::now();
    let mut coords = Vec::new();
    for iy in 0..3 {
        for ix in 0..3 {
            coords.push((140.0 + ix as f64 * 0.5, -30.0 + iy as f64 * 0.5));
        }
    }
    let graph = build_lattice(&coords, false).unwrap();
    let edges = graph.edge_pairs();
    // the fixed generator tree: a snake through the lattice
    let snake = vec![(0, 1), (1, 2), (2, 5), (4, 5), (3, 4), (3, 6), (6, 7), (7, 8)];
    let tree = SpanningTree::new(9, snake).unwrap();
    let gammas = VariogramEdgeMap::constant(tree.edges(), 0.35).unwrap();
    let u = 20.0;
    let config = DsgaConfig {
        max_iter: 6000,
        kappa: 600.0,
        patience: 400,
        tol: 1e-7,
        ..DsgaConfig::default()
    };
    let mut hits = 0;
    for seed in 0..10u64 {
        let samples = sample_mpd_tree(&tree, &gammas, 2000, 1000 + seed).unwrap();
        let panel: Vec<Vec<f64>> = (0..9)
            .map(|i| samples.iter().map(|s| u * s[i]).collect())
            .collect();
        let (ghat, _) = fit_all_edge_gammas(&panel, &edges, u).unwrap();
        let series = build_likelihood_matrices(&panel, &edges, &ghat, u).unwrap();
        let fit = dsga_fit_beta(&series, &config, seed).unwrap();
        // the prior mode over ALL spanning trees is the max-weight tree
        let map_tree = max_product_spanning_tree(&fit.beta).unwrap();
        hits += (map_tree == tree) as usize;
    }
    assert!(
        hits >= 8,
        "ACCEPTANCE 8 [tree recovery]: FAIL ({hits}/10 seeds recovered the generator tree)"
    );
    report(8, "tree-structure recovery", start, 600.0, format!("{hits}/10 seeds"));
}

#[test]
fn criterion_09_bias_scale_self_consistency() {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(109);
    let square = vec![(140.0, -30.0), (140.5, -30.0), (140.0, -29.5), (140.5, -29.5)];
    let edges = build_lattice(&square, true).unwrap().edge_pairs();
    let trees = enumerate_spanning_trees(4, &edges).unwrap();
    let gammas = VariogramEdgeMap::from_pairs(
        edges.iter().map(|&e| (e, rng.gen_range(0.5..3.0))),
    )
    .unwrap();
    let weights: Vec<f64> = (0..edges.len()).map(|_| rng.gen_range(0.3..1.2)).collect();
    let beta = EdgeWeightMatrix::new(4, &edges, weights).unwrap();
    let model = TreeMixtureModel::new(
        TreeEnsemble {
            raw_draws: trees.len(),
            trees,
        },
        gammas.clone(),
        beta.clone(),
        1.0,
    )
    .unwrap();
    let halved = TreeMixtureModel::new(model.ensemble.clone(), gammas.scaled(0.5), beta, 1.0).unwrap();
    let pairs: Vec<(usize, usize, f64)> = pairs_within_graph_distance(4, &edges, 3)
        .into_iter()
        .map(|(i, j)| (i, j, chi_mixture(&halved, i, j, 1.0).unwrap()))
        .collect();
    let a_opt = fit_bias_scale(&model, &pairs).unwrap();
    assert!(
        (0.45..=0.55).contains(&a_opt),
        "ACCEPTANCE 9 [bias scale]: FAIL (a_opt {a_opt})"
    );
    report(9, "bias-scale self-consistency", start, 120.0, format!("a_opt {a_opt:.4}"));
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let start = Instant::now();
    // 25 sites, 2 clusters, 3 windows (6 seasons at width 4, step 1)
    let mut coords = Vec::new();
    for iy in 0..5 {
        for ix in 0..5 {
            coords.push((130.0 + ix as f64 * 0.5, -25.0 + iy as f64 * 0.5));
        }
    }
    let graph = build_lattice(&coords, true).unwrap();
    let ensemble =
        extremix::graphs::sample_tree_ensemble(&graph, &extremix::graphs::OrientationRates::uniform(1.0), 10, 42)
            .unwrap();
    let edges = graph.edge_pairs();
    let gammas = VariogramEdgeMap::constant(&edges, 1.0).unwrap();
    let beta = EdgeWeightMatrix::uniform_normalized(25, &edges).unwrap();
    let spec = SyntheticSpec {
        nx: 5,
        ny: 5,
        lon0: 130.0,
        lat0: -25.0,
        spacing: 0.5,
        start_year: 1999,
        n_seasons: 6,
        margins: SyntheticMargins {
            threshold: 15.0,
            zeta: 0.05,
            sigma: 2.0,
            xi: 0.1,
        },
        dependence: DependenceSpec::Mixture(
            TreeMixtureModel::new(ensemble, gammas, beta, 1.0).unwrap(),
        ),
    };
    let ds = generate_synthetic_dataset(&spec, 10).unwrap();
    let config = PipelineConfig {
        k_clusters: 2,
        window_width: 4,
        window_step: 1,
        dsga_max_iter: 400,
        risk_samples: 500,
        ensemble_size: 40,
        seed: 10,
        threads: 2,
        ..PipelineConfig::default()
    };
    let base = std::env::temp_dir().join("extremix-acceptance-10");
    let _ = std::fs::remove_dir_all(&base);
    let dirs = [base.join("a"), base.join("b")];
    for dir in &dirs {
        extremix::pipeline::run_full(&ds, &config, dir, "synthetic.csv").unwrap();
    }
    let mut files = [Vec::new(), Vec::new()];
    for (k, dir) in dirs.iter().enumerate() {
        let mut stack = vec![dir.clone()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files[k].push(p.strip_prefix(dir).unwrap().to_path_buf());
                }
            }
        }
        files[k].sort();
    }
    assert_eq!(
        files[0], files[1],
        "ACCEPTANCE 10 [determinism]: FAIL (file sets differ)"
    );
    let mut n_bytes = 0usize;
    for rel in &files[0] {
        let a = std::fs::read(dirs[0].join(rel)).unwrap();
        let b = std::fs::read(dirs[1].join(rel)).unwrap();
        n_bytes += a.len();
        assert_eq!(a, b, "ACCEPTANCE 10 [determinism]: FAIL ({} differs)", rel.display());
    }
    report(
        10,
        "end-to-end determinism",
        start,
        300.0,
        format!("{} files, {n_bytes} bytes identical", files[0].len()),
    );
}

#[test]
fn criterion_11_rooted_sampler_variogram() {
    let start = Instant::now();
    let chain: Vec<(usize, usize)> = (0..4).map(|i| (i, i + 1)).collect();
    let tree = SpanningTree::new(5, chain.clone()).unwrap();
    let gammas = VariogramEdgeMap::from_pairs([
        ((0usize, 1usize), 0.8),
        ((1, 2), 1.5),
        ((2, 3), 0.6),
        ((3, 4), 2.1),
    ])
    .unwrap();
    let n = 100_000;
    let mut logs: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for k in 0..n {
        let s = sample_tree_hr_rooted(&tree, &gammas, 0, 111_000 + k as u64).unwrap();
        for (i, v) in s.values.iter().enumerate() {
            logs[i].push(v.ln());
        }
    }
    let mut worst_z: f64 = 0.0;
    for i in 0..5 {
        for j in (i + 1)..5 {
            let want: f64 = tree
                .path(i, j)
                .iter()
                .map(|&(a, b)| gammas.get(a, b).unwrap())
                .sum();
            let diffs: Vec<f64> = logs[i]
                .iter()
                .zip(&logs[j])
                .map(|(a, b)| a - b)
                .collect();
            let var = extremix::stats::variance(&diffs);
            // SE of the variance of a Gaussian sample: sigma^2 sqrt(2/(n-1))
            let se = want * (2.0 / (n as f64 - 1.0)).sqrt();
            let z = (var - want).abs() / se;
            worst_z = worst_z.max(z);
            assert!(
                z < 3.0,
                "ACCEPTANCE 11 [rooted variogram]: FAIL (pair ({i},{j}): var {var} vs {want}, z={z:.2})"
            );
        }
    }
    report(
        11,
        "rooted-sampler variogram",
        start,
        30.0,
        format!("10 pairs, worst |z| {worst_z:.2}"),
    );
}

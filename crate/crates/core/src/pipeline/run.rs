//! Cluster-window fitting, model bundle serialization, risk aggregation,
//! and the end-to-end batch run.
//!
//! Every stage derives its random stream from the top-level seed and the
//! job coordinates, so one seed fully determines every output byte. Jobs
//! are independent: the result of one (cluster, window) pair does not
//! depend on the presence or order of the others.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::dataset::GriddedDataset;
use crate::error::{Error, Result};
use crate::fit::{
    build_likelihood_matrices, dsga_fit_beta, fit_all_edge_gammas, EdgeGammaFit,
    VariogramEdgeMap,
};
use crate::graphs::{
    build_lattice, sample_tree_ensemble, EdgeWeightMatrix, LatticeGraph, SpanningTree,
    TreeEnsemble,
};
use crate::margins::{fit_site_margin, GpdParams, MarginalModel, SiteNeighborhood};
use crate::mixture::{
    chi_mixture, empirical_chi, fit_bias_scale, pairs_within_graph_distance, TreeMixtureModel,
};
use crate::pipeline::cluster::{kmeans_clusters, ClusterAssignment};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::seasons::{decadal_windows, summer_seasons, SeasonPanel, WindowSpec};
use crate::simulate::sample_mixture;
use crate::stats;

/// Shortest round-trip float formatting used in every emitted CSV.
pub(crate) fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

/// Derived per-job stream: top seed combined with the job coordinates.
fn job_seed(seed: u64, cluster: usize, window: usize) -> u64 {
    seed ^ ((cluster as u64) << 32) ^ ((window as u64) << 8)
}

/// One empirical/model chi pair inside a cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiPair {
    pub i: usize,
    pub j: usize,
    pub distance_km: f64,
    /// Empirical estimate; NaN when undefined (no exceedances).
    pub chi_emp: f64,
    /// Bias-corrected model value.
    pub chi_model: f64,
    /// Pair entered the bias-scale loss (graph distance cap).
    pub in_loss: bool,
}

/// Dependence part of a fitted cluster-window bundle.
#[derive(Debug, Clone)]
pub struct DependenceFit {
    pub graph: LatticeGraph,
    pub model: TreeMixtureModel,
    pub gamma_fits: Vec<EdgeGammaFit>,
    pub chi_pairs: Vec<ChiPair>,
    pub dsga_iterations: usize,
    pub dsga_objective: f64,
    pub dsga_objective_init: f64,
    pub dsga_converged: bool,
    pub retained_times: usize,
    pub likelihood_clamped: usize,
}

/// A fully fitted (cluster, window) combination.
#[derive(Debug, Clone)]
pub struct ClusterWindowFit {
    pub cluster: usize,
    pub window: WindowSpec,
    /// Global dataset site indices, cluster-local order.
    pub sites: Vec<usize>,
    pub margins: Vec<MarginalModel>,
    /// None for single-site clusters: marginal-only result.
    pub dependence: Option<DependenceFit>,
    pub job_seed: u64,
}

/// Fit one cluster-window combination: marginal stage, transform, edge
/// variograms, tree ensemble, DSGA edge weights, prior, bias scale.
pub fn fit_cluster_window(
    ds: &GriddedDataset,
    panel: &SeasonPanel,
    window: &WindowSpec,
    cluster: usize,
    sites: &[usize],
    config: &PipelineConfig,
) -> Result<ClusterWindowFit> {
    let context = format!("cluster {cluster}, window {} ({})", window.id, window.label);
    fit_cluster_window_inner(ds, panel, window, cluster, sites, config)
        .map_err(|e| e.with_context(context))
}

fn fit_cluster_window_inner(
    ds: &GriddedDataset,
    panel: &SeasonPanel,
    window: &WindowSpec,
    cluster: usize,
    sites: &[usize],
    config: &PipelineConfig,
) -> Result<ClusterWindowFit> {
    if sites.is_empty() {
        return Err(Error::Validation("empty cluster".into()));
    }
    let seed = job_seed(config.seed, cluster, window.id);
    let times = panel.times_of_slots(window.first_slot..=window.last_slot);
    if times.is_empty() {
        return Err(Error::InsufficientData {
            what: "window time points".into(),
            needed: 1,
            have: 0,
        });
    }

    // window-restricted series per cluster site
    let series: Vec<Vec<f64>> = sites
        .iter()
        .map(|&s| times.iter().map(|&t| ds.value(s, t)).collect())
        .collect();
    let coords: Vec<(f64, f64)> = sites
        .iter()
        .map(|&s| (ds.sites[s].lon, ds.sites[s].lat))
        .collect();

    // stage 1: pooled marginal fits within the cluster
    let hoods = SiteNeighborhood::build_all(&coords, config.n_neighbors);
    let mut margins = Vec::with_capacity(sites.len());
    for (local, hood) in hoods.iter().enumerate() {
        let neighbor_series: Vec<&[f64]> = hood
            .members
            .iter()
            .filter(|&&m| m != local)
            .map(|&m| series[m].as_slice())
            .collect();
        let model = fit_site_margin(&series[local], &neighbor_series, config.threshold_q)
            .map_err(|e| e.with_context(format!("margins of site {}", ds.sites[sites[local]].id)))?;
        margins.push(model);
    }

    if sites.len() == 1 {
        return Ok(ClusterWindowFit {
            cluster,
            window: window.clone(),
            sites: sites.to_vec(),
            margins,
            dependence: None,
            job_seed: seed,
        });
    }

    // transform to the unit-Pareto scale
    let pareto_panel: Vec<Vec<f64>> = series
        .iter()
        .zip(&margins)
        .map(|(s, m)| m.series_to_unit_pareto(s))
        .collect::<Result<_>>()?;

    // stage 2: dependence
    let graph = build_lattice(&coords, config.diagonals)?;
    let edges = graph.edge_pairs();
    let (gammas, gamma_fits) = fit_all_edge_gammas(&pareto_panel, &edges, config.pareto_u)?;
    let lik_series = build_likelihood_matrices(&pareto_panel, &edges, &gammas, config.pareto_u)?;
    let ensemble = sample_tree_ensemble(&graph, &config.rates(), config.ensemble_size, seed ^ 1)?;
    let dsga = dsga_fit_beta(&lik_series, &config.dsga(), seed ^ 2)?;

    // bias-correction scale from empirical chi on nearby pairs
    let loss_pairs = pairs_within_graph_distance(sites.len(), &edges, config.chi_max_hops);
    let provisional =
        TreeMixtureModel::new(ensemble.clone(), gammas.clone(), dsga.beta.clone(), 1.0)?;
    let mut loss_input = Vec::new();
    for &(i, j) in &loss_pairs {
        if let Some(chi) = empirical_chi(&pareto_panel[i], &pareto_panel[j], config.chi_q)? {
            loss_input.push((i, j, chi));
        }
    }
    let a_opt = if loss_input.is_empty() {
        1.0
    } else {
        fit_bias_scale(&provisional, &loss_input)?
    };
    let model = TreeMixtureModel::new(ensemble, gammas, dsga.beta, a_opt)?;

    // chi table over every in-cluster pair
    let loss_set: std::collections::BTreeSet<(usize, usize)> = loss_pairs.into_iter().collect();
    let mut chi_pairs = Vec::new();
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            let chi_emp = empirical_chi(&pareto_panel[i], &pareto_panel[j], config.chi_q)?
                .unwrap_or(f64::NAN);
            chi_pairs.push(ChiPair {
                i,
                j,
                distance_km: stats::geodesic_km(
                    coords[i].0,
                    coords[i].1,
                    coords[j].0,
                    coords[j].1,
                ),
                chi_emp,
                chi_model: chi_mixture(&model, i, j, a_opt)?,
                in_loss: loss_set.contains(&(i, j)),
            });
        }
    }

    Ok(ClusterWindowFit {
        cluster,
        window: window.clone(),
        sites: sites.to_vec(),
        margins,
        dependence: Some(DependenceFit {
            graph,
            model,
            gamma_fits,
            chi_pairs,
            dsga_iterations: dsga.iterations,
            dsga_objective: dsga.objective,
            dsga_objective_init: dsga.objective_init,
            dsga_converged: dsga.converged,
            retained_times: lik_series.n_times(),
            likelihood_clamped: lik_series.clamped,
        }),
        job_seed: seed,
    })
}

/// Spatially aggregated risk of one fitted bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskSummary {
    pub cluster: usize,
    pub window: usize,
    pub window_label: String,
    /// Mean back-transformed value over sites and replicates (data units).
    pub risk: f64,
    /// Monte Carlo standard error over replicates.
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Draw mixture samples, map them back to the data scale through the
/// fitted margins, and average over space and replicates.
///
/// Mixture coordinates are exceedance ratios against the dependence
/// threshold, so each is scaled by `pareto_u` first; coordinates below the
/// unit-Pareto support floor map to the site's empirical minimum.
pub fn risk_aggregate(fit: &ClusterWindowFit, config: &PipelineConfig, n: usize) -> Result<RiskSummary> {
    let seed = fit.job_seed ^ 3;
    let per_replicate: Vec<f64> = match &fit.dependence {
        Some(dep) => {
            let samples = sample_mixture(&dep.model, n, seed)?;
            samples
                .iter()
                .map(|x| {
                    let mut acc = 0.0;
                    for (local, margin) in fit.margins.iter().enumerate() {
                        let y = (config.pareto_u * x[local]).max(1.0);
                        acc += margin.from_unit_pareto(y)?;
                    }
                    Ok(acc / fit.margins.len() as f64)
                })
                .collect::<Result<_>>()?
        }
        None => {
            // single-site cluster: the exceedance law is unit Pareto
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let pareto = 1.0 / (1.0 - rng.gen_range(0.0..1.0f64));
                    let y = (config.pareto_u * pareto).max(1.0);
                    fit.margins[0].from_unit_pareto(y)
                })
                .collect::<Result<_>>()?
        }
    };
    let risk = stats::mean(&per_replicate);
    let std_error = (stats::variance(&per_replicate) / n as f64).sqrt();
    if !risk.is_finite() {
        return Err(Error::Optimization {
            message: "risk aggregate is not finite".into(),
            last_iterate: vec![risk],
        });
    }
    Ok(RiskSummary {
        cluster: fit.cluster,
        window: fit.window.id,
        window_label: fit.window.label.clone(),
        risk,
        std_error,
        n_samples: n,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Bundle serialization
// ---------------------------------------------------------------------------

/// Metadata of one serialized bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub cluster: usize,
    pub window: usize,
    pub window_label: String,
    pub first_season: i32,
    pub last_season: i32,
    pub site_ids: Vec<String>,
    pub marginal_only: bool,
    pub a_opt: f64,
    pub ensemble_distinct: usize,
    pub ensemble_raw_draws: usize,
    pub dsga_iterations: usize,
    pub dsga_objective: f64,
    pub dsga_objective_init: f64,
    pub dsga_converged: bool,
    pub retained_times: usize,
    pub likelihood_clamped: usize,
    pub gamma_boundary_edges: usize,
    pub job_seed: u64,
    pub config_fingerprint: String,
    pub version: String,
}

fn write_lines(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Serialize a fitted bundle into its own directory.
pub fn save_bundle(
    fit: &ClusterWindowFit,
    ds: &GriddedDataset,
    panel: &SeasonPanel,
    config: &PipelineConfig,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let site_ids: Vec<String> = fit.sites.iter().map(|&s| ds.sites[s].id.clone()).collect();

    write_lines(
        &dir.join("margins.csv"),
        "site_id,lon,lat,threshold,zeta,sigma,xi",
        fit.sites.iter().zip(&fit.margins).map(|(&s, m)| {
            format!(
                "{},{},{},{},{},{},{}",
                ds.sites[s].id,
                fmt(ds.sites[s].lon),
                fmt(ds.sites[s].lat),
                fmt(m.threshold),
                fmt(m.zeta),
                fmt(m.gpd.sigma),
                fmt(m.gpd.xi)
            )
        }),
    )?;
    write_lines(
        &dir.join("samples.csv"),
        "site_id,value",
        fit.sites.iter().zip(&fit.margins).flat_map(|(&s, m)| {
            let id = ds.sites[s].id.clone();
            m.sorted_sample
                .iter()
                .map(move |v| format!("{id},{}", fmt(*v)))
                .collect::<Vec<_>>()
        }),
    )?;

    let mut manifest = BundleManifest {
        cluster: fit.cluster,
        window: fit.window.id,
        window_label: fit.window.label.clone(),
        first_season: panel.seasons[fit.window.first_slot],
        last_season: panel.seasons[fit.window.last_slot],
        site_ids,
        marginal_only: fit.dependence.is_none(),
        a_opt: 1.0,
        ensemble_distinct: 0,
        ensemble_raw_draws: 0,
        dsga_iterations: 0,
        dsga_objective: 0.0,
        dsga_objective_init: 0.0,
        dsga_converged: false,
        retained_times: 0,
        likelihood_clamped: 0,
        gamma_boundary_edges: 0,
        job_seed: fit.job_seed,
        config_fingerprint: config.fingerprint(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };

    if let Some(dep) = &fit.dependence {
        write_lines(
            &dir.join("graph.csv"),
            "i,j,orientation",
            dep.graph
                .edges
                .iter()
                .map(|e| format!("{},{},{}", e.i, e.j, e.orientation.as_str())),
        )?;
        write_lines(
            &dir.join("gamma.csv"),
            "i,j,gamma",
            dep.model
                .gammas
                .iter()
                .map(|(&(i, j), &g)| format!("{i},{j},{}", fmt(g))),
        )?;
        write_lines(
            &dir.join("beta.csv"),
            "i,j,beta",
            dep.model
                .beta
                .edges()
                .iter()
                .zip(dep.model.beta.weights())
                .map(|(&(i, j), &w)| format!("{i},{j},{}", fmt(w))),
        )?;
        write_lines(
            &dir.join("trees.csv"),
            "tree_id,i,j",
            dep.model.ensemble.trees.iter().enumerate().flat_map(|(k, t)| {
                t.edges()
                    .iter()
                    .map(move |&(i, j)| format!("{k},{i},{j}"))
                    .collect::<Vec<_>>()
            }),
        )?;
        write_lines(
            &dir.join("priors.csv"),
            "tree_id,prior",
            dep.model
                .prior
                .iter()
                .enumerate()
                .map(|(k, p)| format!("{k},{}", fmt(*p))),
        )?;
        write_lines(
            &dir.join("chi_pairs.csv"),
            "i,j,distance_km,chi_emp,chi_model,in_loss",
            dep.chi_pairs.iter().map(|p| {
                format!(
                    "{},{},{},{},{},{}",
                    p.i,
                    p.j,
                    fmt(p.distance_km),
                    fmt(p.chi_emp),
                    fmt(p.chi_model),
                    p.in_loss
                )
            }),
        )?;
        manifest.a_opt = dep.model.a_opt;
        manifest.ensemble_distinct = dep.model.ensemble.len();
        manifest.ensemble_raw_draws = dep.model.ensemble.raw_draws;
        manifest.dsga_iterations = dep.dsga_iterations;
        manifest.dsga_objective = dep.dsga_objective;
        manifest.dsga_objective_init = dep.dsga_objective_init;
        manifest.dsga_converged = dep.dsga_converged;
        manifest.retained_times = dep.retained_times;
        manifest.likelihood_clamped = dep.likelihood_clamped;
        manifest.gamma_boundary_edges = dep.gamma_fits.iter().filter(|f| f.boundary).count();
    }

    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn parse_cell<T: std::str::FromStr>(row: &[String], idx: usize, path: &Path) -> Result<T> {
    row.get(idx)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::Integrity(format!("bad cell {idx} in {}", path.display())))
}

/// Reload a serialized bundle. Margins come back exactly; the mixture
/// model is reassembled from its CSV parts.
pub fn load_bundle(dir: &Path) -> Result<(BundleManifest, ClusterWindowFit)> {
    let manifest: BundleManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;

    let margin_rows = read_csv_rows(&dir.join("margins.csv"))?;
    let sample_rows = read_csv_rows(&dir.join("samples.csv"))?;
    let mut samples: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for row in &sample_rows {
        let path = dir.join("samples.csv");
        let id: String = parse_cell(row, 0, &path)?;
        samples.entry(id).or_default().push(parse_cell(row, 1, &path)?);
    }
    let mut margins = Vec::new();
    let mut coords = Vec::new();
    for row in &margin_rows {
        let path = dir.join("margins.csv");
        let id: String = parse_cell(row, 0, &path)?;
        coords.push((
            parse_cell::<f64>(row, 1, &path)?,
            parse_cell::<f64>(row, 2, &path)?,
        ));
        let model = MarginalModel::new(
            parse_cell(row, 3, &path)?,
            parse_cell(row, 4, &path)?,
            GpdParams::new(parse_cell(row, 5, &path)?, parse_cell(row, 6, &path)?)?,
            samples.remove(&id).ok_or_else(|| {
                Error::Integrity(format!("no samples for site {id} in bundle"))
            })?,
        )?;
        margins.push(model);
    }
    let n = margins.len();

    let dependence = if manifest.marginal_only {
        None
    } else {
        let gamma_path = dir.join("gamma.csv");
        let mut gammas = VariogramEdgeMap::new();
        for row in &read_csv_rows(&gamma_path)? {
            gammas.insert(
                parse_cell(row, 0, &gamma_path)?,
                parse_cell(row, 1, &gamma_path)?,
                parse_cell(row, 2, &gamma_path)?,
            )?;
        }
        let beta_path = dir.join("beta.csv");
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for row in &read_csv_rows(&beta_path)? {
            edges.push((
                parse_cell::<usize>(row, 0, &beta_path)?,
                parse_cell::<usize>(row, 1, &beta_path)?,
            ));
            weights.push(parse_cell::<f64>(row, 2, &beta_path)?);
        }
        let beta = EdgeWeightMatrix::new(n, &edges, weights)?;
        let trees_path = dir.join("trees.csv");
        let mut tree_edges: std::collections::BTreeMap<usize, Vec<(usize, usize)>> =
            Default::default();
        for row in &read_csv_rows(&trees_path)? {
            let k: usize = parse_cell(row, 0, &trees_path)?;
            tree_edges.entry(k).or_default().push((
                parse_cell(row, 1, &trees_path)?,
                parse_cell(row, 2, &trees_path)?,
            ));
        }
        let trees: Vec<SpanningTree> = tree_edges
            .into_values()
            .map(|es| SpanningTree::new(n, es))
            .collect::<Result<_>>()?;
        let ensemble = TreeEnsemble {
            trees,
            raw_draws: manifest.ensemble_raw_draws,
        };
        let model = TreeMixtureModel::new(ensemble, gammas, beta, manifest.a_opt)?;

        let chi_path = dir.join("chi_pairs.csv");
        let chi_pairs = read_csv_rows(&chi_path)?
            .iter()
            .map(|row| {
                let emp: String = parse_cell(row, 3, &chi_path)?;
                Ok(ChiPair {
                    i: parse_cell(row, 0, &chi_path)?,
                    j: parse_cell(row, 1, &chi_path)?,
                    distance_km: parse_cell(row, 2, &chi_path)?,
                    chi_emp: if emp == "NA" {
                        f64::NAN
                    } else {
                        emp.parse().map_err(|_| {
                            Error::Integrity(format!("bad chi_emp in {}", chi_path.display()))
                        })?
                    },
                    chi_model: parse_cell(row, 4, &chi_path)?,
                    in_loss: parse_cell(row, 5, &chi_path)?,
                })
            })
            .collect::<Result<_>>()?;

        let graph = build_lattice(&coords, edges_have_diagonals(dir)?)?;
        Some(DependenceFit {
            graph,
            model,
            gamma_fits: Vec::new(),
            chi_pairs,
            dsga_iterations: manifest.dsga_iterations,
            dsga_objective: manifest.dsga_objective,
            dsga_objective_init: manifest.dsga_objective_init,
            dsga_converged: manifest.dsga_converged,
            retained_times: manifest.retained_times,
            likelihood_clamped: manifest.likelihood_clamped,
        })
    };

    let window = WindowSpec {
        id: manifest.window,
        first_slot: 0,
        last_slot: 0,
        label: manifest.window_label.clone(),
    };
    let fit = ClusterWindowFit {
        cluster: manifest.cluster,
        window,
        sites: (0..n).collect(),
        margins,
        dependence,
        job_seed: manifest.job_seed,
    };
    Ok((manifest, fit))
}

fn edges_have_diagonals(dir: &Path) -> Result<bool> {
    let rows = read_csv_rows(&dir.join("graph.csv"))?;
    Ok(rows
        .iter()
        .any(|r| matches!(r.get(2).map(String::as_str), Some("D1") | Some("D2"))))
}

// ---------------------------------------------------------------------------
// Full batch run
// ---------------------------------------------------------------------------

/// Everything the full run produced, for reporting.
pub struct RunOutput {
    pub clusters: ClusterAssignment,
    pub windows: Vec<WindowSpec>,
    pub fits: Vec<ClusterWindowFit>,
    pub risks: Vec<RiskSummary>,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    input: String,
    n_sites: usize,
    n_times: usize,
    n_seasons: usize,
    n_windows: usize,
    n_clusters: usize,
    seed: u64,
    config_fingerprint: String,
    config: &'a PipelineConfig,
    version: &'static str,
    bundles: Vec<String>,
}

/// Season panel, window list and cluster assignment of one run; writes
/// `clusters.csv` and `windows.csv`.
pub struct PreparedRun {
    pub panel: SeasonPanel,
    pub windows: Vec<WindowSpec>,
    pub clusters: ClusterAssignment,
}

pub fn prepare_run(
    ds: &GriddedDataset,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<PreparedRun> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let panel = summer_seasons(ds);
    let windows = decadal_windows(&panel, config.window_width, config.window_step)?;
    let clusters = kmeans_clusters(&ds.coords(), config.k_clusters, config.seed)?;
    write_lines(
        &out_dir.join("clusters.csv"),
        "site_id,lon,lat,cluster",
        ds.sites
            .iter()
            .zip(&clusters.assignment)
            .map(|(s, &c)| format!("{},{},{},{c}", s.id, fmt(s.lon), fmt(s.lat))),
    )?;
    write_lines(
        &out_dir.join("windows.csv"),
        "window,first_season,last_season,label",
        windows.iter().map(|w| {
            format!(
                "{},{},{},{}",
                w.id, panel.seasons[w.first_slot], panel.seasons[w.last_slot], w.label
            )
        }),
    )?;
    Ok(PreparedRun {
        panel,
        windows,
        clusters,
    })
}

/// Fit every (cluster, window) combination on a worker pool and serialize
/// the bundles plus the run manifest.
///
/// Jobs are distributed round-robin and results scattered back by job
/// index, so thread scheduling cannot affect any output.
pub fn fit_stage(
    ds: &GriddedDataset,
    prepared: &PreparedRun,
    config: &PipelineConfig,
    out_dir: &Path,
    input_name: &str,
) -> Result<Vec<ClusterWindowFit>> {
    let jobs: Vec<(usize, &WindowSpec)> = (0..config.k_clusters)
        .flat_map(|c| prepared.windows.iter().map(move |w| (c, w)))
        .collect();
    let run_job = |&(c, w): &(usize, &WindowSpec)| -> Result<ClusterWindowFit> {
        let sites = prepared.clusters.members_of(c);
        fit_cluster_window(ds, &prepared.panel, w, c, &sites, config)
    };
    let threads = config.threads.min(jobs.len().max(1));
    let mut results: Vec<(usize, Result<ClusterWindowFit>)> = if threads <= 1 {
        jobs.iter().map(run_job).enumerate().collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let jobs = &jobs;
                    let run_job = &run_job;
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut k = t;
                        while k < jobs.len() {
                            out.push((k, run_job(&jobs[k])));
                            k += threads;
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };
    results.sort_by_key(|(k, _)| *k);

    let mut fits = Vec::new();
    let mut bundles = Vec::new();
    for (_, result) in results {
        let fit = result?;
        let rel = format!("fits/c{}_w{}", fit.cluster, fit.window.id);
        save_bundle(&fit, ds, &prepared.panel, config, &out_dir.join(&rel))?;
        bundles.push(rel);
        fits.push(fit);
    }

    let manifest = RunManifest {
        input: input_name.to_string(),
        n_sites: ds.n_sites(),
        n_times: ds.n_times(),
        n_seasons: prepared.panel.n_seasons(),
        n_windows: prepared.windows.len(),
        n_clusters: config.k_clusters,
        seed: config.seed,
        config_fingerprint: config.fingerprint(),
        config,
        version: env!("CARGO_PKG_VERSION"),
        bundles,
    };
    std::fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(fits)
}

/// Risk aggregates for every fit, written to `risk.csv`.
pub fn risk_stage(
    fits: &[ClusterWindowFit],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<RiskSummary>> {
    let risks: Vec<RiskSummary> = fits
        .iter()
        .map(|fit| risk_aggregate(fit, config, config.risk_samples))
        .collect::<Result<_>>()?;
    write_risk_csv(&out_dir.join("risk.csv"), &risks)?;
    Ok(risks)
}

/// Run the full batch pipeline: seasons, windows, clustering, one fit and
/// risk aggregate per (cluster, window), serialized bundles, reports, and
/// a run manifest. Returns the in-memory results.
pub fn run_full(
    ds: &GriddedDataset,
    config: &PipelineConfig,
    out_dir: &Path,
    input_name: &str,
) -> Result<RunOutput> {
    let prepared = prepare_run(ds, config, out_dir)?;
    let fits = fit_stage(ds, &prepared, config, out_dir, input_name)?;
    let risks = risk_stage(&fits, config, out_dir)?;
    let output = RunOutput {
        clusters: prepared.clusters,
        windows: prepared.windows,
        fits,
        risks,
    };
    super::report::emit_reports(ds, &prepared.panel, &output, config, out_dir)?;
    Ok(output)
}

/// Load every serialized bundle under `out_dir/fits`, sorted by
/// (cluster, window).
pub fn load_fits(out_dir: &Path) -> Result<Vec<(BundleManifest, ClusterWindowFit)>> {
    let fits_dir = out_dir.join("fits");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&fits_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out: Vec<(BundleManifest, ClusterWindowFit)> = dirs
        .iter()
        .map(|d| load_bundle(d).map_err(|e| e.with_context(format!("bundle {}", d.display()))))
        .collect::<Result<_>>()?;
    out.sort_by_key(|(m, _)| (m.cluster, m.window));
    Ok(out)
}

/// Reconstruct a [`RunOutput`] from a run directory (bundles, clusters,
/// windows, risk table) against the original dataset.
pub fn load_run(ds: &GriddedDataset, out_dir: &Path) -> Result<RunOutput> {
    let loaded = load_fits(out_dir)?;

    let clusters_path = out_dir.join("clusters.csv");
    let mut by_id = std::collections::HashMap::new();
    for row in read_csv_rows(&clusters_path)? {
        let id: String = parse_cell(&row, 0, &clusters_path)?;
        let c: usize = parse_cell(&row, 3, &clusters_path)?;
        by_id.insert(id, c);
    }
    let assignment: Vec<usize> = ds
        .sites
        .iter()
        .map(|s| {
            by_id.get(&s.id).copied().ok_or_else(|| {
                Error::Integrity(format!("site {} missing from clusters.csv", s.id))
            })
        })
        .collect::<Result<_>>()?;
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let clusters = ClusterAssignment {
        assignment,
        k,
        seed: 0,
        wcss: f64::NAN,
        centroids: Vec::new(),
    };

    let windows_path = out_dir.join("windows.csv");
    let panel = summer_seasons(ds);
    let windows: Vec<WindowSpec> = read_csv_rows(&windows_path)?
        .iter()
        .map(|row| {
            let first_season: i32 = parse_cell(row, 1, &windows_path)?;
            let last_season: i32 = parse_cell(row, 2, &windows_path)?;
            Ok(WindowSpec {
                id: parse_cell(row, 0, &windows_path)?,
                first_slot: panel
                    .seasons
                    .binary_search(&first_season)
                    .map_err(|_| Error::Integrity("window season not in dataset".into()))?,
                last_slot: panel
                    .seasons
                    .binary_search(&last_season)
                    .map_err(|_| Error::Integrity("window season not in dataset".into()))?,
                label: row[3].clone(),
            })
        })
        .collect::<Result<_>>()?;

    let risk_path = out_dir.join("risk.csv");
    let risks: Vec<RiskSummary> = if risk_path.exists() {
        read_csv_rows(&risk_path)?
            .iter()
            .map(|row| {
                Ok(RiskSummary {
                    cluster: parse_cell(row, 0, &risk_path)?,
                    window: parse_cell(row, 1, &risk_path)?,
                    window_label: row[2].clone(),
                    risk: parse_cell(row, 3, &risk_path)?,
                    std_error: parse_cell(row, 4, &risk_path)?,
                    n_samples: parse_cell(row, 5, &risk_path)?,
                    seed: parse_cell(row, 6, &risk_path)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    // bundles store cluster-local site indices; remap them onto the
    // dataset's global indices through the stored site ids
    let site_index: std::collections::HashMap<&str, usize> = ds
        .sites
        .iter()
        .enumerate()
        .map(|(k, s)| (s.id.as_str(), k))
        .collect();
    let mut fits = Vec::new();
    for (manifest, mut fit) in loaded {
        fit.sites = manifest
            .site_ids
            .iter()
            .map(|id| {
                site_index.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Integrity(format!("bundle site {id} missing from the dataset"))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(w) = windows.iter().find(|w| w.id == manifest.window) {
            fit.window = w.clone();
        }
        fits.push(fit);
    }

    Ok(RunOutput {
        clusters,
        windows,
        fits,
        risks,
    })
}

pub(crate) fn write_risk_csv(path: &Path, risks: &[RiskSummary]) -> Result<()> {
    write_lines(
        path,
        "cluster,window,window_label,risk,std_error,n_samples,seed",
        risks.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.cluster,
                r.window,
                r.window_label,
                fmt(r.risk),
                fmt(r.std_error),
                r.n_samples,
                r.seed
            )
        }),
    )?;
    Ok(())
}

/// Fit whole-period margins for every site (no clustering), the `margins`
/// subcommand's output.
pub fn fit_margins_whole(
    ds: &GriddedDataset,
    config: &PipelineConfig,
) -> Result<Vec<MarginalModel>> {
    let coords = ds.coords();
    let hoods = SiteNeighborhood::build_all(&coords, config.n_neighbors);
    hoods
        .iter()
        .enumerate()
        .map(|(s, hood)| {
            let neighbor_series: Vec<&[f64]> = hood
                .members
                .iter()
                .filter(|&&m| m != s)
                .map(|&m| ds.series(m))
                .collect();
            fit_site_margin(ds.series(s), &neighbor_series, config.threshold_q)
                .map_err(|e| e.with_context(format!("margins of site {}", ds.sites[s].id)))
        })
        .collect()
}

/// Write the whole-period margins table plus the per-site sample sidecar.
pub fn write_margins_csv(
    ds: &GriddedDataset,
    margins: &[MarginalModel],
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let table = dir.join("margins.csv");
    write_lines(
        &table,
        "site_id,lon,lat,threshold,zeta,sigma,xi",
        ds.sites.iter().zip(margins).map(|(s, m)| {
            format!(
                "{},{},{},{},{},{},{}",
                s.id,
                fmt(s.lon),
                fmt(s.lat),
                fmt(m.threshold),
                fmt(m.zeta),
                fmt(m.gpd.sigma),
                fmt(m.gpd.xi)
            )
        }),
    )?;
    let sidecar = dir.join("margins_samples.csv");
    write_lines(
        &sidecar,
        "site_id,value",
        ds.sites.iter().zip(margins).flat_map(|(s, m)| {
            let id = s.id.clone();
            m.sorted_sample
                .iter()
                .map(move |v| format!("{id},{}", fmt(*v)))
                .collect::<Vec<_>>()
        }),
    )?;
    Ok((table, sidecar))
}

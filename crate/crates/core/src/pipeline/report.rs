//! Report emission: per-site parameter maps, smoothed chi-versus-distance
//! curves, cluster risk maps and trend diagnostics, as CSV tables plus SVG
//! figures. All outputs are byte-stable for identical inputs.

use std::io::Write as _;
use std::path::Path;

use crate::dataset::GriddedDataset;
use crate::error::Result;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::run::{fmt, ChiPair, RunOutput};
use crate::pipeline::seasons::SeasonPanel;
use crate::pipeline::svg;
use crate::pipeline::trend::{quantile_trend, seasonal_quantiles};

/// Gaussian-kernel smoother of scattered (x, y) points, evaluated on an
/// even grid; bandwidth is a fixed fraction of the x-range.
pub fn kernel_smooth(points: &[(f64, f64)], grid: usize, bandwidth_frac: f64) -> Vec<(f64, f64)> {
    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if finite.is_empty() || grid == 0 {
        return Vec::new();
    }
    let x_max = finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let x_min = finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let bw = (bandwidth_frac * (x_max - x_min)).max(1e-9);
    (0..grid)
        .map(|k| {
            let x = x_min + (x_max - x_min) * k as f64 / (grid.max(2) - 1) as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for &(xi, yi) in &finite {
                let w = (-0.5 * ((x - xi) / bw).powi(2)).exp();
                num += w * yi;
                den += w;
            }
            (x, num / den)
        })
        .collect()
}

/// Number of grid points of each smoothed chi curve.
const CURVE_GRID: usize = 25;
/// Kernel bandwidth as a fraction of the maximum pair distance.
const CURVE_BANDWIDTH: f64 = 0.2;

pub fn emit_reports(
    ds: &GriddedDataset,
    panel: &SeasonPanel,
    run: &RunOutput,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<()> {
    let report_dir = out_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    emit_parameter_maps(ds, run, &report_dir)?;
    emit_chi_outputs(run, &report_dir)?;
    emit_risk_maps(ds, run, &report_dir)?;
    emit_trend(ds, panel, config, &report_dir)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Per-site fitted marginal parameters, one row per (window, site), plus a
/// heatmap per (window, field).
fn emit_parameter_maps(ds: &GriddedDataset, run: &RunOutput, dir: &Path) -> Result<()> {
    let mut csv = String::from("window,window_label,site_id,lon,lat,threshold,zeta,sigma,xi\n");
    for fit in &run.fits {
        for (&s, m) in fit.sites.iter().zip(&fit.margins) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                fit.window.id,
                fit.window.label,
                ds.sites[s].id,
                fmt(ds.sites[s].lon),
                fmt(ds.sites[s].lat),
                fmt(m.threshold),
                fmt(m.zeta),
                fmt(m.gpd.sigma),
                fmt(m.gpd.xi)
            ));
        }
    }
    write_text(&dir.join("params.csv"), &csv)?;

    let coords = ds.coords();
    for window in &run.windows {
        for (field, pick) in [
            ("threshold", 0usize),
            ("sigma", 1),
            ("xi", 2),
        ] {
            let mut values = vec![f64::NAN; ds.n_sites()];
            for fit in run.fits.iter().filter(|f| f.window.id == window.id) {
                for (&s, m) in fit.sites.iter().zip(&fit.margins) {
                    values[s] = match pick {
                        0 => m.threshold,
                        1 => m.gpd.sigma,
                        _ => m.gpd.xi,
                    };
                }
            }
            let title = format!("{field}, window {} ({})", window.id, window.label);
            write_text(
                &dir.join(format!("map_{field}_w{}.svg", window.id)),
                &svg::heatmap(&title, &coords, &values),
            )?;
        }
    }
    Ok(())
}

/// Emit only the chi tables and curves (the `chi` subcommand).
pub fn emit_chi(run: &RunOutput, out_dir: &Path) -> Result<()> {
    let report_dir = out_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    emit_chi_outputs(run, &report_dir)
}

/// Smoothed chi-versus-distance curves per cluster and window, as CSV and
/// one SVG per cluster overlaying its windows.
fn emit_chi_outputs(run: &RunOutput, dir: &Path) -> Result<()> {
    type CurveSet = Vec<(String, Vec<(f64, f64)>)>;
    let mut pair_csv =
        String::from("cluster,window,i,j,distance_km,chi_emp,chi_model,in_loss\n");
    let mut curve_csv = String::from("cluster,window,distance_km,chi_emp_smooth,chi_model_smooth\n");
    let mut by_cluster: std::collections::BTreeMap<usize, CurveSet> = Default::default();

    for fit in &run.fits {
        let Some(dep) = &fit.dependence else {
            continue;
        };
        for p in &dep.chi_pairs {
            pair_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fit.cluster,
                fit.window.id,
                p.i,
                p.j,
                fmt(p.distance_km),
                fmt(p.chi_emp),
                fmt(p.chi_model),
                p.in_loss
            ));
        }
        let emp_points: Vec<(f64, f64)> = dep
            .chi_pairs
            .iter()
            .map(|p: &ChiPair| (p.distance_km, p.chi_emp))
            .collect();
        let model_points: Vec<(f64, f64)> = dep
            .chi_pairs
            .iter()
            .map(|p| (p.distance_km, p.chi_model))
            .collect();
        let emp_smooth = kernel_smooth(&emp_points, CURVE_GRID, CURVE_BANDWIDTH);
        let model_smooth = kernel_smooth(&model_points, CURVE_GRID, CURVE_BANDWIDTH);
        for (e, m) in emp_smooth.iter().zip(&model_smooth) {
            curve_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fit.cluster,
                fit.window.id,
                fmt(e.0),
                fmt(e.1),
                fmt(m.1)
            ));
        }
        by_cluster.entry(fit.cluster).or_default().push((
            format!("model w{} ({})", fit.window.id, fit.window.label),
            model_smooth,
        ));
    }
    write_text(&dir.join("chi_pairs.csv"), &pair_csv)?;
    write_text(&dir.join("chi_curves.csv"), &curve_csv)?;
    for (cluster, series) in by_cluster {
        write_text(
            &dir.join(format!("chi_curves_c{cluster}.svg")),
            &svg::curves(&format!("chi vs distance, cluster {cluster}"), &series),
        )?;
    }
    Ok(())
}

/// Cluster risk painted on member sites, one map per window plus the
/// last-minus-first difference.
fn emit_risk_maps(ds: &GriddedDataset, run: &RunOutput, dir: &Path) -> Result<()> {
    let coords = ds.coords();
    let site_risk = |window: usize| -> Vec<f64> {
        let mut values = vec![f64::NAN; ds.n_sites()];
        for r in run.risks.iter().filter(|r| r.window == window) {
            for (s, &assigned) in run.clusters.assignment.iter().enumerate() {
                if assigned == r.cluster {
                    values[s] = r.risk;
                }
            }
        }
        values
    };
    for w in &run.windows {
        let values = site_risk(w.id);
        write_text(
            &dir.join(format!("risk_map_w{}.svg", w.id)),
            &svg::heatmap(&format!("aggregated risk, window {} ({})", w.id, w.label), &coords, &values),
        )?;
    }
    if run.windows.len() >= 2 {
        let first = site_risk(run.windows.first().unwrap().id);
        let last = site_risk(run.windows.last().unwrap().id);
        let diff: Vec<f64> = last.iter().zip(&first).map(|(a, b)| a - b).collect();
        write_text(
            &dir.join("risk_map_diff.svg"),
            &svg::heatmap("aggregated risk, last minus first window", &coords, &diff),
        )?;
    }
    Ok(())
}

/// Site-wise trend of the seasonal 0.98-quantile, CSV plus slope map.
fn emit_trend(
    ds: &GriddedDataset,
    panel: &SeasonPanel,
    _config: &PipelineConfig,
    dir: &Path,
) -> Result<()> {
    let season_times: Vec<Vec<usize>> = (0..panel.n_seasons())
        .map(|s| panel.times_of_season(s))
        .collect();
    let mut csv = String::from("site_id,lon,lat,slope,p_value,n_seasons\n");
    let mut slopes = vec![f64::NAN; ds.n_sites()];
    for (s, slope_slot) in slopes.iter_mut().enumerate() {
        let qs = seasonal_quantiles(ds.series(s), &season_times, 0.98);
        let row = match quantile_trend(&qs) {
            Ok(fit) => {
                *slope_slot = fit.slope;
                format!(
                    "{},{},{},{},{},{}\n",
                    ds.sites[s].id,
                    fmt(ds.sites[s].lon),
                    fmt(ds.sites[s].lat),
                    fmt(fit.slope),
                    fmt(fit.p_value),
                    fit.n_seasons
                )
            }
            Err(_) => format!(
                "{},{},{},NA,NA,0\n",
                ds.sites[s].id,
                fmt(ds.sites[s].lon),
                fmt(ds.sites[s].lat)
            ),
        };
        csv.push_str(&row);
    }
    write_text(&dir.join("trend.csv"), &csv)?;
    write_text(
        &dir.join("trend_map.svg"),
        &svg::heatmap("seasonal 98%-quantile slope", &ds.coords(), &slopes),
    )?;
    Ok(())
}

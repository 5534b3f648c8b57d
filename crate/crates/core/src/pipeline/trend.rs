//! Per-site trend diagnostics: ordinary least squares of per-season
//! empirical quantiles on the season index, with a two-sided t-test.

use crate::error::{Error, Result};
use crate::stats::{empirical_quantile, t_test_p_value};

#[derive(Debug, Clone, Copy)]
pub struct TrendFit {
    /// Quantile change per season.
    pub slope: f64,
    pub intercept: f64,
    /// Two-sided p-value of the slope; NaN when the fit is degenerate
    /// (constant series).
    pub p_value: f64,
    pub n_seasons: usize,
}

/// Per-season empirical `q`-quantiles of one site (missing values are
/// skipped; seasons without data are skipped entirely).
pub fn seasonal_quantiles(
    series: &[f64],
    season_times: &[Vec<usize>],
    q: f64,
) -> Vec<Option<f64>> {
    season_times
        .iter()
        .map(|times| {
            let mut vals: Vec<f64> = times
                .iter()
                .map(|&t| series[t])
                .filter(|v| !v.is_nan())
                .collect();
            if vals.is_empty() {
                return None;
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some(empirical_quantile(&vals, q))
        })
        .collect()
}

/// OLS of per-season quantiles on the season number. Needs at least three
/// seasons with data.
pub fn quantile_trend(quantiles: &[Option<f64>]) -> Result<TrendFit> {
    let points: Vec<(f64, f64)> = quantiles
        .iter()
        .enumerate()
        .filter_map(|(s, q)| q.map(|v| (s as f64, v)))
        .collect();
    let n = points.len();
    if n < 3 {
        return Err(Error::InsufficientData {
            what: "seasons with data for a trend".into(),
            needed: 3,
            have: n,
        });
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            r * r
        })
        .sum();
    let df = nf - 2.0;
    let sigma2 = rss / df;
    let se = (sigma2 / sxx).sqrt();
    let p_value = if se == 0.0 {
        // exact fit: zero residuals; constant series yields slope 0 with
        // an undefined test, flagged as NaN
        if slope == 0.0 {
            f64::NAN
        } else {
            0.0
        }
    } else {
        t_test_p_value(slope / se, df)?
    };
    Ok(TrendFit {
        slope,
        intercept,
        p_value,
        n_seasons: n,
    })
}

//! Site-wise marginal models: generalized Pareto tails fitted by pooled
//! maximum likelihood over a site neighborhood, spliced with the empirical
//! distribution below the threshold, and the transforms between the data
//! scale and the unit-Pareto scale.

use crate::error::{Error, Result};
use crate::optim::nelder_mead_max;
use crate::stats;

/// Shape values inside this band use the exponential (xi = 0) branch to
/// avoid catastrophic cancellation.
pub const XI_SWITCH_TOL: f64 = 1e-8;

/// Fitting box for the GP shape.
pub const XI_BOUNDS: (f64, f64) = (-0.95, 0.95);

/// Minimum number of pooled exceedances accepted by [`fit_pooled_gpd`].
pub const MIN_EXCEEDANCES: usize = 10;

/// Generalized Pareto scale/shape pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !xi.is_finite() {
            return Err(Error::ParamDomain(format!(
                "GP scale must be positive and finite, got sigma={sigma}, xi={xi}"
            )));
        }
        Ok(Self { sigma, xi })
    }

    /// Upper endpoint of the excess distribution (-sigma/xi for xi < 0).
    pub fn upper_endpoint(&self) -> Option<f64> {
        if self.xi < -XI_SWITCH_TOL {
            Some(-self.sigma / self.xi)
        } else {
            None
        }
    }
}

/// GP distribution function H(z) of an excess z >= 0.
pub fn gpd_cdf(z: f64, p: &GpdParams) -> Result<f64> {
    if !(p.sigma > 0.0) {
        return Err(Error::ParamDomain(format!(
            "nonpositive GP scale {}",
            p.sigma
        )));
    }
    if z < 0.0 {
        return Err(Error::ParamDomain(format!("GP cdf needs z >= 0, got {z}")));
    }
    if p.xi.abs() < XI_SWITCH_TOL {
        Ok(1.0 - (-z / p.sigma).exp())
    } else {
        let t = 1.0 + p.xi * z / p.sigma;
        if t <= 0.0 {
            // beyond a finite upper endpoint
            Ok(1.0)
        } else {
            Ok(1.0 - t.powf(-1.0 / p.xi))
        }
    }
}

/// GP quantile: the excess e with H(e) = pr.
pub fn gpd_quantile(pr: f64, p: &GpdParams) -> Result<f64> {
    if !(0.0..1.0).contains(&pr) {
        return Err(Error::ParamDomain(format!(
            "GP quantile needs pr in [0,1), got {pr}"
        )));
    }
    if p.xi.abs() < XI_SWITCH_TOL {
        Ok(-p.sigma * (1.0 - pr).ln())
    } else {
        Ok(p.sigma / p.xi * ((1.0 - pr).powf(-p.xi) - 1.0))
    }
}

/// Log-density of a GP excess; -inf outside the support.
fn gpd_log_density(excess: f64, sigma: f64, xi: f64) -> f64 {
    if excess < 0.0 || sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if xi.abs() < XI_SWITCH_TOL {
        -sigma.ln() - excess / sigma
    } else {
        let t = 1.0 + xi * excess / sigma;
        if t <= 0.0 {
            f64::NEG_INFINITY
        } else {
            -sigma.ln() - (1.0 + 1.0 / xi) * t.ln()
        }
    }
}

/// Pooled GP log-likelihood over excesses (values - u), all above 0.
pub fn pooled_gpd_loglik(excesses: &[f64], sigma: f64, xi: f64) -> f64 {
    excesses
        .iter()
        .map(|&e| gpd_log_density(e, sigma, xi))
        .sum()
}

/// A pooled fitting neighborhood: the center site plus its nearest
/// neighbors (four on interior lattice sites).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteNeighborhood {
    pub center: usize,
    pub members: Vec<usize>,
}

impl SiteNeighborhood {
    /// Build neighborhoods of the center plus the `k` geodesically nearest
    /// sites (fewer when the site set is smaller). Ties break on site index.
    pub fn build_all(coords: &[(f64, f64)], k: usize) -> Vec<SiteNeighborhood> {
        (0..coords.len())
            .map(|i| {
                let (lon_i, lat_i) = coords[i];
                let mut others: Vec<(f64, usize)> = coords
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, &(lon, lat))| (stats::geodesic_km(lon_i, lat_i, lon, lat), j))
                    .collect();
                others.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut members = vec![i];
                members.extend(others.iter().take(k).map(|&(_, j)| j));
                members.sort_unstable();
                SiteNeighborhood { center: i, members }
            })
            .collect()
    }
}

/// Outcome of a pooled GP fit.
#[derive(Debug, Clone)]
pub struct GpdFit {
    pub params: GpdParams,
    pub loglik: f64,
    pub n_exceedances: usize,
    /// Shape estimate pinned at the fitting box.
    pub boundary: bool,
    pub converged: bool,
}

/// Fit a GP distribution to pooled threshold exceedances by maximum
/// likelihood. `exceedances` are (value, site) pairs with every value
/// strictly above `u`; the site tag is provenance only.
///
/// The search is a bounded Nelder–Mead on (log sigma, xi) started from the
/// moment-matching point (mean excess, 0); the result never scores below
/// the starting point.
pub fn fit_pooled_gpd(exceedances: &[(f64, usize)], u: f64) -> Result<GpdFit> {
    if exceedances.len() < MIN_EXCEEDANCES {
        return Err(Error::InsufficientData {
            what: "pooled exceedances".into(),
            needed: MIN_EXCEEDANCES,
            have: exceedances.len(),
        });
    }
    let mut excesses: Vec<f64> = exceedances.iter().map(|&(v, _)| v - u).collect();
    if excesses.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::ParamDomain(
            "every exceedance must lie strictly above the threshold".into(),
        ));
    }
    // Fixed summation order makes the fit invariant to input ordering.
    excesses.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mean_excess = stats::mean(&excesses).max(1e-12);
    let start = [mean_excess.ln(), 0.0];
    let obj = |p: &[f64]| pooled_gpd_loglik(&excesses, p[0].exp(), p[1]);
    let f0 = obj(&start);

    let r = nelder_mead_max(
        obj,
        &start,
        &[0.3, 0.1],
        &[(-30.0, 30.0), (XI_BOUNDS.0, XI_BOUNDS.1)],
        1e-10,
        800,
    );
    if !r.converged && !r.f.is_finite() {
        return Err(Error::Optimization {
            message: "pooled GP likelihood did not converge".into(),
            last_iterate: r.x,
        });
    }
    let (x, f) = if r.f >= f0 { (r.x, r.f) } else { (start.to_vec(), f0) };
    let params = GpdParams::new(x[0].exp(), x[1])?;
    let boundary = (params.xi - XI_BOUNDS.0).abs() < 1e-6 || (params.xi - XI_BOUNDS.1).abs() < 1e-6;
    Ok(GpdFit {
        params,
        loglik: f,
        n_exceedances: excesses.len(),
        boundary,
        converged: r.converged,
    })
}

/// The spliced marginal distribution of one site: GP tail above the
/// threshold, empirical distribution below it.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    pub threshold: f64,
    /// Exceedance probability P(Z > u) at fit time.
    pub zeta: f64,
    pub gpd: GpdParams,
    /// The site's own sample, sorted ascending (the empirical branch).
    pub sorted_sample: Vec<f64>,
}

impl MarginalModel {
    pub fn new(threshold: f64, zeta: f64, gpd: GpdParams, mut sample: Vec<f64>) -> Result<Self> {
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::ParamDomain(format!(
                "exceedance probability must lie in (0,1], got {zeta}"
            )));
        }
        if sample.is_empty() {
            return Err(Error::InsufficientData {
                what: "marginal sample".into(),
                needed: 1,
                have: 0,
            });
        }
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            threshold,
            zeta,
            gpd,
            sorted_sample: sample,
        })
    }

    /// Empirical CDF with the k/(T+1) plotting-position convention and
    /// average ranks for ties.
    pub fn ecdf(&self, z: f64) -> f64 {
        let t = self.sorted_sample.len() as f64;
        let below = self.sorted_sample.partition_point(|&x| x < z);
        let upto = self.sorted_sample.partition_point(|&x| x <= z);
        let ties = upto - below;
        let rank = if ties == 0 {
            below as f64
        } else {
            below as f64 + (ties as f64 + 1.0) / 2.0
        };
        rank / (t + 1.0)
    }

    /// Empirical quantile: smallest order statistic z_(k) with
    /// k/(T+1) >= p.
    pub fn equantile(&self, p: f64) -> f64 {
        let t = self.sorted_sample.len();
        let k = (p * (t as f64 + 1.0)).ceil() as usize;
        self.sorted_sample[k.clamp(1, t) - 1]
    }

    /// Spliced CDF estimate: empirical below the threshold, GP tail above.
    pub fn cdf(&self, z: f64) -> Result<f64> {
        if z > self.threshold {
            let h = gpd_cdf(z - self.threshold, &self.gpd)?;
            Ok(1.0 - self.zeta * (1.0 - h))
        } else {
            Ok(self.ecdf(z))
        }
    }

    /// Transform one observation to the unit-Pareto scale, Y = 1/(1-F(z)).
    pub fn to_unit_pareto(&self, z: f64) -> Result<f64> {
        if z >= self.threshold {
            let h = gpd_cdf(z - self.threshold, &self.gpd)?;
            // Clamp the survival away from zero so finite-endpoint fits
            // stay finite on data at the endpoint.
            let surv = (self.zeta * (1.0 - h)).max(1e-15);
            Ok(1.0 / surv)
        } else {
            Ok(1.0 / (1.0 - self.ecdf(z)))
        }
    }

    /// Transform a whole series; NaN (missing) passes through.
    pub fn series_to_unit_pareto(&self, zs: &[f64]) -> Result<Vec<f64>> {
        zs.iter()
            .map(|&z| {
                if z.is_nan() {
                    Ok(f64::NAN)
                } else {
                    self.to_unit_pareto(z)
                }
            })
            .collect()
    }

    /// Inverse transform from the unit-Pareto scale. The tail branch is
    /// exact; the empirical branch returns the quantile convention's order
    /// statistic, so round trips land within one quantile step.
    pub fn from_unit_pareto(&self, y: f64) -> Result<f64> {
        if !(y >= 1.0) {
            return Err(Error::ParamDomain(format!(
                "unit-Pareto values lie in [1, inf), got {y}"
            )));
        }
        if y * self.zeta >= 1.0 {
            // 1 - 1/y >= G(u): invert the GP tail
            let pr = 1.0 - 1.0 / (y * self.zeta);
            Ok(self.threshold + gpd_quantile(pr, &self.gpd)?)
        } else {
            Ok(self.equantile(1.0 - 1.0 / y))
        }
    }

    /// m-observation return level, the level exceeded on average once
    /// every m observations. Requires m * zeta > 1.
    pub fn return_level(&self, m: u64) -> Result<f64> {
        return_level(m, self)
    }
}

/// Return level z^(m) of a marginal model (Eq. on the fitted tail).
pub fn return_level(m: u64, model: &MarginalModel) -> Result<f64> {
    let mz = m as f64 * model.zeta;
    if mz <= 1.0 {
        return Err(Error::ParamDomain(format!(
            "return level below threshold: m*zeta = {mz} <= 1"
        )));
    }
    let p = &model.gpd;
    if p.xi.abs() < XI_SWITCH_TOL {
        Ok(model.threshold + p.sigma * mz.ln())
    } else {
        Ok(model.threshold + p.sigma / p.xi * (mz.powf(p.xi) - 1.0))
    }
}

/// Fit the marginal model of one site from its own series plus pooled
/// neighbor series, using the site-wise empirical `q`-quantile threshold.
/// NaN entries are treated as missing.
pub fn fit_site_margin(
    site_series: &[f64],
    neighbor_series: &[&[f64]],
    q: f64,
) -> Result<MarginalModel> {
    let own: Vec<f64> = site_series.iter().copied().filter(|v| !v.is_nan()).collect();
    if own.is_empty() {
        return Err(Error::InsufficientData {
            what: "site observations".into(),
            needed: 1,
            have: 0,
        });
    }
    let mut sorted = own.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let u = stats::empirical_quantile(&sorted, q);

    let mut pooled: Vec<(f64, usize)> = Vec::new();
    for (j, series) in std::iter::once(&site_series)
        .chain(neighbor_series.iter())
        .enumerate()
    {
        pooled.extend(
            series
                .iter()
                .copied()
                .filter(|v| !v.is_nan() && *v > u)
                .map(|v| (v, j)),
        );
    }
    let fit = fit_pooled_gpd(&pooled, u)?;
    let n_exc = own.iter().filter(|&&v| v > u).count();
    let zeta = n_exc as f64 / own.len() as f64;
    MarginalModel::new(u, zeta.max(1.0 / (own.len() as f64 + 1.0)), fit.params, own)
}

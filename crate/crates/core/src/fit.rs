//! Dependence estimation on the unit-Pareto scale: per-edge variogram
//! parameters by censored pairwise likelihood, per-time-point likelihood
//! matrices, and the doubly-stochastic gradient ascent (DSGA) that fits
//! the edge-weight matrix of the spanning-tree prior.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::graphs::EdgeWeightMatrix;
use crate::hr::{bivariate_v, bivariate_v1, bivariate_v2, log_pair_intensity};
use crate::optim::grid_golden_max;
use crate::stats::norm_quantile;

pub use crate::graphs::VariogramEdgeMap;

/// Search box for the per-edge variogram parameter.
pub const GAMMA_BOUNDS: (f64, f64) = (1e-4, 1e3);

/// Minimum number of bivariate exceedances required by [`fit_edge_gamma`].
pub const MIN_PAIR_EXCEEDANCES: usize = 10;

/// Likelihood contributions are clamped at this floor before taking logs;
/// clamp events are counted, not hidden.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Censored pairwise log-likelihood contribution of one time point, or
/// `None` when neither coordinate exceeds the threshold.
///
/// With scaled coordinates (yi/u, yj/u): both exceed -> log(lambda / V(1,1));
/// only one exceeds -> log(-V_k(.) / V(1,1)).
pub fn censored_pair_loglik(yi: f64, yj: f64, u: f64, g: f64) -> Result<Option<f64>> {
    censored_pair_term(yi, yj, u, g).map(|o| o.map(|(ll, _)| ll))
}

/// As [`censored_pair_loglik`], also reporting whether the underflow floor
/// was applied.
pub fn censored_pair_term(yi: f64, yj: f64, u: f64, g: f64) -> Result<Option<(f64, bool)>> {
    if !(u > 1.0) {
        return Err(Error::ParamDomain(format!(
            "dependence threshold must exceed 1 on the Pareto scale, got {u}"
        )));
    }
    if !(g > 0.0) {
        return Err(Error::ParamDomain(format!(
            "variogram candidate must be positive, got {g}"
        )));
    }
    let exceed_i = yi > u;
    let exceed_j = yj > u;
    if !exceed_i && !exceed_j {
        return Ok(None);
    }
    let log_v11 = bivariate_v(1.0, 1.0, g)?.ln();
    let ll = if exceed_i && exceed_j {
        log_pair_intensity(yi / u, yj / u, g)? - log_v11
    } else if exceed_i {
        let v1 = -bivariate_v1(yi / u, 1.0, g)?;
        if v1 <= LIKELIHOOD_FLOOR {
            return Ok(Some((LIKELIHOOD_FLOOR.ln() - log_v11, true)));
        }
        v1.ln() - log_v11
    } else {
        let v2 = -bivariate_v2(1.0, yj / u, g)?;
        if v2 <= LIKELIHOOD_FLOOR {
            return Ok(Some((LIKELIHOOD_FLOOR.ln() - log_v11, true)));
        }
        v2.ln() - log_v11
    };
    if ll < LIKELIHOOD_FLOOR.ln() {
        Ok(Some((LIKELIHOOD_FLOOR.ln(), true)))
    } else {
        Ok(Some((ll, false)))
    }
}

/// Outcome of a per-edge variogram fit.
#[derive(Debug, Clone)]
pub struct EdgeGammaFit {
    pub gamma: f64,
    pub loglik: f64,
    /// Times with at least one of the pair exceeding the threshold.
    pub n_exceedances: usize,
    /// Estimate pinned at the search box.
    pub boundary: bool,
    /// Number of floored likelihood contributions at the optimum.
    pub clamped: usize,
}

/// Empirical pairwise chi at a fixed unit-Pareto threshold, averaged over
/// the two conditioning directions. `None` if either site never exceeds.
fn empirical_pair_chi_at(series_i: &[f64], series_j: &[f64], u: f64) -> Option<f64> {
    let mut n_i = 0usize;
    let mut n_j = 0usize;
    let mut n_both = 0usize;
    for (&yi, &yj) in series_i.iter().zip(series_j) {
        if yi.is_nan() || yj.is_nan() {
            continue;
        }
        if yi > u {
            n_i += 1;
        }
        if yj > u {
            n_j += 1;
        }
        if yi > u && yj > u {
            n_both += 1;
        }
    }
    if n_i == 0 || n_j == 0 {
        return None;
    }
    Some(0.5 * (n_both as f64 / n_i as f64 + n_both as f64 / n_j as f64))
}

/// Invert the chi formula for a starting value: g0 = (2 PhiBar^{-1}(chi/2))^2.
fn gamma_from_chi(chi: f64) -> f64 {
    let chi = chi.clamp(1e-4, 0.9999);
    // PhiBar^{-1}(p) = Phi^{-1}(1 - p)
    let q = norm_quantile(1.0 - 0.5 * chi).unwrap_or(0.0);
    (2.0 * q).powi(2).clamp(GAMMA_BOUNDS.0, GAMMA_BOUNDS.1)
}

/// Maximize the censored pairwise log-likelihood of one edge over the
/// variogram box, by a grid on log gamma refined with golden section.
/// The returned log-likelihood never falls below the empirical-chi
/// starting point. NaN entries in either series are treated as missing.
pub fn fit_edge_gamma(series_i: &[f64], series_j: &[f64], u: f64) -> Result<EdgeGammaFit> {
    if series_i.len() != series_j.len() {
        return Err(Error::Validation(format!(
            "paired series lengths differ: {} vs {}",
            series_i.len(),
            series_j.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = series_i
        .iter()
        .zip(series_j)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan() && (**a > u || **b > u))
        .map(|(&a, &b)| (a, b))
        .collect();
    if pairs.len() < MIN_PAIR_EXCEEDANCES {
        return Err(Error::InsufficientData {
            what: "bivariate exceedances".into(),
            needed: MIN_PAIR_EXCEEDANCES,
            have: pairs.len(),
        });
    }

    let loglik_at = |g: f64| -> f64 {
        let mut total = 0.0;
        for &(yi, yj) in &pairs {
            match censored_pair_term(yi, yj, u, g) {
                Ok(Some((ll, _))) => total += ll,
                Ok(None) => {}
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total
    };

    let g0 = empirical_pair_chi_at(series_i, series_j, u)
        .map(gamma_from_chi)
        .unwrap_or(1.0);
    let (lo, hi) = (GAMMA_BOUNDS.0.ln(), GAMMA_BOUNDS.1.ln());
    let (log_g, mut loglik) =
        grid_golden_max(|lg: f64| loglik_at(lg.exp()), lo, hi, 60, &[g0.ln()], 1e-7);
    let mut gamma = log_g.exp().clamp(GAMMA_BOUNDS.0, GAMMA_BOUNDS.1);

    // a bound that scores as well as the interior optimum means the
    // surface is monotone (or flat) up to the box: snap there and flag
    let mut boundary = false;
    let flat_tol = 1e-8 * (1.0 + loglik.abs());
    let ll_lo = loglik_at(GAMMA_BOUNDS.0);
    let ll_hi = loglik_at(GAMMA_BOUNDS.1);
    if ll_hi + flat_tol >= loglik && ll_hi >= ll_lo {
        gamma = GAMMA_BOUNDS.1;
        loglik = loglik.max(ll_hi);
        boundary = true;
    } else if ll_lo + flat_tol >= loglik {
        gamma = GAMMA_BOUNDS.0;
        loglik = loglik.max(ll_lo);
        boundary = true;
    }

    let clamped = pairs
        .iter()
        .filter(|&&(yi, yj)| matches!(censored_pair_term(yi, yj, u, gamma), Ok(Some((_, true)))))
        .count();
    Ok(EdgeGammaFit {
        gamma,
        loglik,
        n_exceedances: pairs.len(),
        boundary,
        clamped,
    })
}

/// Fit every edge of a graph from a unit-Pareto panel (site-major:
/// `panel[site][time]`). Edges are independent, so failures carry the edge
/// in their context.
pub fn fit_all_edge_gammas(
    panel: &[Vec<f64>],
    edges: &[(usize, usize)],
    u: f64,
) -> Result<(VariogramEdgeMap, Vec<EdgeGammaFit>)> {
    let mut map = VariogramEdgeMap::new();
    let mut fits = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        let fit = fit_edge_gamma(&panel[i], &panel[j], u)
            .map_err(|e| e.with_context(format!("edge ({i},{j})")))?;
        map.insert(i, j, fit.gamma)?;
        fits.push(fit);
    }
    Ok((map, fits))
}

/// Per-retained-time censored likelihood contributions on the edge set.
/// Edges with no exceedance at a retained time hold the neutral value 1.
#[derive(Debug, Clone)]
pub struct LikelihoodMatrixSeries {
    pub n_sites: usize,
    pub edges: Vec<(usize, usize)>,
    /// Original panel time indices of the retained time points.
    pub times: Vec<usize>,
    /// `values[t][e]`: the likelihood contribution of edge e at retained
    /// time index t.
    pub values: Vec<Vec<f64>>,
    /// Count of floored contributions across the whole series.
    pub clamped: usize,
}

impl LikelihoodMatrixSeries {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// The full symmetric matrix at one retained time (zero off the edge
    /// set), mostly for serialization and tests.
    pub fn matrix_at(&self, t: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_sites, self.n_sites);
        for (&(i, j), &v) in self.edges.iter().zip(&self.values[t]) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }
}

/// Build the likelihood matrix series: times where at least one site
/// exceeds `u` are retained; each edge contributes exp of its censored
/// log-likelihood, or 1 when the pair has no exceedance (or a coordinate
/// is missing) at that time.
pub fn build_likelihood_matrices(
    panel: &[Vec<f64>],
    edges: &[(usize, usize)],
    gammas: &VariogramEdgeMap,
    u: f64,
) -> Result<LikelihoodMatrixSeries> {
    let n_sites = panel.len();
    let n_times = panel.first().map_or(0, Vec::len);
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut clamped = 0usize;
    for t in 0..n_times {
        let any_exceed = panel.iter().any(|s| !s[t].is_nan() && s[t] > u);
        if !any_exceed {
            continue;
        }
        let mut row = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            let g = gammas
                .get(i, j)
                .ok_or_else(|| Error::Config(format!("no fitted gamma on edge ({i},{j})")))?;
            let (yi, yj) = (panel[i][t], panel[j][t]);
            let v = if yi.is_nan() || yj.is_nan() {
                1.0
            } else {
                match censored_pair_term(yi, yj, u, g)? {
                    Some((ll, cl)) => {
                        clamped += cl as usize;
                        ll.exp()
                    }
                    None => 1.0,
                }
            };
            row.push(v);
        }
        times.push(t);
        values.push(row);
    }
    Ok(LikelihoodMatrixSeries {
        n_sites,
        edges: edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect(),
        times,
        values,
        clamped,
    })
}

/// DSGA tuning constants. All exposed in the pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DsgaConfig {
    /// Penalty strength on the squared norm constraint.
    pub a1: f64,
    /// Initial step size.
    pub rho0: f64,
    /// Step decay constant: rho_k = rho0 / (1 + k/kappa).
    pub kappa: f64,
    /// Mini-batch size (capped at the number of retained times).
    pub batch: usize,
    /// Maximum iterations.
    pub max_iter: usize,
    /// Relative improvement threshold for convergence.
    pub tol: f64,
    /// Iterations without improvement before stopping.
    pub patience: usize,
}

impl Default for DsgaConfig {
    fn default() -> Self {
        Self {
            a1: 100.0,
            rho0: 0.05,
            kappa: 50.0,
            batch: 32,
            max_iter: 2000,
            tol: 1e-6,
            patience: 50,
        }
    }
}

impl DsgaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.rho0 > 0.0 && self.kappa > 0.0 && self.tol > 0.0)
            || self.batch == 0
            || self.patience == 0
        {
            return Err(Error::Config(format!("invalid DSGA config: {self:?}")));
        }
        Ok(())
    }
}

fn minor_logdet_and_inverse(
    n: usize,
    edges: &[(usize, usize)],
    weights: &[f64],
) -> Option<(f64, DMatrix<f64>)> {
    let m = n - 1;
    let mut q = DMatrix::<f64>::zeros(m, m);
    for (&(i, j), &w) in edges.iter().zip(weights) {
        if i < m {
            q[(i, i)] += w;
        }
        if j < m {
            q[(j, j)] += w;
        }
        if i < m && j < m {
            q[(i, j)] -= w;
            q[(j, i)] -= w;
        }
    }
    let chol = q.cholesky()?;
    let mut logdet = 0.0;
    for d in chol.l().diagonal().iter() {
        if !(*d > 0.0) {
            return None;
        }
        logdet += d.ln();
    }
    Some((2.0 * logdet, chol.inverse()))
}

fn minor_logdet_only(n: usize, edges: &[(usize, usize)], weights: &[f64]) -> Option<f64> {
    crate::graphs::weighted_minor_logdet(n, edges, weights, n - 1).ok()
}

/// The penalized mini-batch objective of the edge-weight optimization:
/// sum over the batch of log det Q(beta ⊙ L_t), minus |batch| log det
/// Q(beta), minus a1 (||U(beta)||^2 - 1)^2, with beta = exp(eta) on the
/// edge set. Numerically singular minors yield -inf rather than an error.
pub fn dsga_objective(
    eta: &[f64],
    batch: &[usize],
    series: &LikelihoodMatrixSeries,
    a1: f64,
) -> f64 {
    let n = series.n_sites;
    let beta: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let Some(logdet_beta) = minor_logdet_only(n, &series.edges, &beta) else {
        return f64::NEG_INFINITY;
    };
    let mut total = -(batch.len() as f64) * logdet_beta;
    let mut scaled = vec![0.0; beta.len()];
    for &t in batch {
        for (s, (&b, &l)) in scaled.iter_mut().zip(beta.iter().zip(&series.values[t])) {
            *s = b * l;
        }
        match minor_logdet_only(n, &series.edges, &scaled) {
            Some(ld) => total += ld,
            None => return f64::NEG_INFINITY,
        }
    }
    let norm2: f64 = beta.iter().map(|b| b * b).sum();
    total - a1 * (norm2 - 1.0) * (norm2 - 1.0)
}

/// Analytic gradient of [`dsga_objective`] with respect to eta.
///
/// Uses d log det Q(w) / d w_e = Qinv_ii + Qinv_jj - 2 Qinv_ij (terms for
/// the deleted node dropped), chained through w_e = exp(eta_e) * L_te.
pub fn dsga_gradient(
    eta: &[f64],
    batch: &[usize],
    series: &LikelihoodMatrixSeries,
    a1: f64,
) -> Result<Vec<f64>> {
    let n = series.n_sites;
    let m = n - 1;
    let beta: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let edges = &series.edges;

    let trace_term = |inv: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        if i < m {
            s += inv[(i, i)];
        }
        if j < m {
            s += inv[(j, j)];
        }
        if i < m && j < m {
            s -= 2.0 * inv[(i, j)];
        }
        s
    };

    let (_, inv_beta) = minor_logdet_and_inverse(n, edges, &beta)
        .ok_or_else(|| Error::Singular("Q(beta) is singular at the current iterate".into()))?;

    let mut grad = vec![0.0; beta.len()];
    // -|batch| d/d eta of log det Q(beta)
    for (e, &(i, j)) in edges.iter().enumerate() {
        grad[e] -= batch.len() as f64 * trace_term(&inv_beta, i, j) * beta[e];
    }
    let mut scaled = vec![0.0; beta.len()];
    for &t in batch {
        for (s, (&b, &l)) in scaled.iter_mut().zip(beta.iter().zip(&series.values[t])) {
            *s = b * l;
        }
        let (_, inv_t) = minor_logdet_and_inverse(n, edges, &scaled).ok_or_else(|| {
            Error::Singular(format!("Q(beta .* L_t) singular at retained time {t}"))
        })?;
        for (e, &(i, j)) in edges.iter().enumerate() {
            grad[e] += trace_term(&inv_t, i, j) * series.values[t][e] * beta[e];
        }
    }
    // penalty: -a1 (||beta||^2 - 1)^2
    let norm2: f64 = beta.iter().map(|b| b * b).sum();
    for (g, &b) in grad.iter_mut().zip(&beta) {
        *g -= 4.0 * a1 * (norm2 - 1.0) * b * b;
    }
    Ok(grad)
}

/// Result of a DSGA run.
#[derive(Debug, Clone)]
pub struct DsgaFit {
    pub beta: EdgeWeightMatrix,
    pub iterations: usize,
    /// Full-data objective at the returned beta.
    pub objective: f64,
    /// Full-data objective at the uniform initialization.
    pub objective_init: f64,
    pub converged: bool,
}

/// Fit the edge-weight matrix by doubly-stochastic gradient ascent:
/// uniform normalized initialization, mini-batch gradient steps with a
/// decaying step size, and a rescaling projection to unit upper-triangular
/// norm after every update.
pub fn dsga_fit_beta(
    series: &LikelihoodMatrixSeries,
    config: &DsgaConfig,
    seed: u64,
) -> Result<DsgaFit> {
    config.validate()?;
    if series.n_times() == 0 {
        return Err(Error::InsufficientData {
            what: "retained exceedance times".into(),
            needed: 1,
            have: 0,
        });
    }
    let n_edges = series.edges.len();
    let t_all: Vec<usize> = (0..series.n_times()).collect();
    let batch_size = config.batch.min(series.n_times());
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);

    // uniform start: beta_e = 1/sqrt(|E|), already unit norm
    let mut eta = vec![-0.5 * (n_edges as f64).ln(); n_edges];
    let project = |eta: &mut Vec<f64>| {
        let norm2: f64 = eta.iter().map(|e| (2.0 * e).exp()).sum();
        let log_norm = 0.5 * norm2.ln();
        for e in eta.iter_mut() {
            *e -= log_norm;
        }
    };

    let objective_init = dsga_objective(&eta, &t_all, series, config.a1);
    let mut best_obj = objective_init;
    let mut best_eta = eta.clone();
    let mut patience = 0usize;
    let mut singular_streak = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    for k in 0..config.max_iter {
        iterations = k + 1;
        // step 2: sample the mini-batch (distinct indices)
        let batch: Vec<usize> = sample_indices(&mut rng, series.n_times(), batch_size);
        // step 3: mini-batch gradient
        let grad = match dsga_gradient(&eta, &batch, series, config.a1) {
            Ok(g) => g,
            Err(_) => {
                singular_streak += 1;
                if singular_streak > 50 {
                    return Err(Error::Optimization {
                        message: "DSGA diverged: repeated singular iterates".into(),
                        last_iterate: eta,
                    });
                }
                continue;
            }
        };
        singular_streak = 0;
        // step 4: ascent with decaying step
        let rho = config.rho0 / (1.0 + k as f64 / config.kappa);
        for (e, g) in eta.iter_mut().zip(&grad) {
            *e += rho * g;
        }
        // step 5: project back to the unit-norm feasible set
        project(&mut eta);

        let obj = dsga_objective(&eta, &t_all, series, config.a1);
        if obj.is_finite() && obj > best_obj + config.tol * (1.0 + best_obj.abs()) {
            best_obj = obj;
            best_eta = eta.clone();
            patience = 0;
        } else {
            if obj.is_finite() && obj > best_obj {
                best_obj = obj;
                best_eta = eta.clone();
            }
            patience += 1;
            if patience >= config.patience {
                converged = true;
                break;
            }
        }
    }

    let mut weights: Vec<f64> = best_eta.iter().map(|e| e.exp()).collect();
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    for w in weights.iter_mut() {
        *w /= norm;
    }
    let beta = EdgeWeightMatrix::new(series.n_sites, &series.edges, weights)?;
    Ok(DsgaFit {
        beta,
        iterations,
        objective: best_obj,
        objective_init,
        converged,
    })
}

/// `k` distinct indices from 0..n, sorted for determinism.
fn sample_indices(rng: &mut Xoshiro256PlusPlus, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    if k == n {
        return (0..n).collect();
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Starting value used by [`fit_edge_gamma`], exposed for diagnostics:
/// inverts the empirical chi of the pair at threshold `u`.
pub fn edge_gamma_start(series_i: &[f64], series_j: &[f64], u: f64) -> Option<f64> {
    empirical_pair_chi_at(series_i, series_j, u).map(gamma_from_chi)
}

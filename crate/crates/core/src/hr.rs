//! Hüsler–Reiss building blocks: the variogram matrix, the anchored
//! conditional covariance, the N-variate intensity, the bivariate exponent
//! function with its partial derivatives, and the pairwise χ-measure.
//!
//! The intensity here carries the leading factor `x_k^{-2}`: that sign is
//! forced by homogeneity of order -(N+1) together with the unit margin
//! normalization, and is verified by the quadrature and homogeneity tests.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::graphs::{tree_gamma, SpanningTree, VariogramEdgeMap};
use crate::stats::{norm_cdf, norm_pdf};

/// Relative eigenvalue floor for positive-definiteness checks.
pub const PD_TOLERANCE: f64 = 1e-12;

const LOG_2PI: f64 = 1.83787706640934548;

/// Symmetric nonnegative variogram matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct VariogramMatrix {
    mat: DMatrix<f64>,
}

impl VariogramMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() < 2 {
            return Err(Error::InvalidVariogram(format!(
                "need a square matrix of dimension >= 2, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        for i in 0..mat.nrows() {
            if mat[(i, i)] != 0.0 {
                return Err(Error::InvalidVariogram("diagonal must be zero".into()));
            }
            for j in 0..mat.ncols() {
                let v = mat[(i, j)];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidVariogram(format!(
                        "entries must be nonnegative and finite, got {v} at ({i},{j})"
                    )));
                }
                if (v - mat[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::InvalidVariogram("matrix is not symmetric".into()));
                }
            }
        }
        Ok(Self { mat })
    }

    /// 2x2 variogram of a single pair.
    pub fn pair(g: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(2, 2, &[0.0, g, g, 0.0]))
    }

    /// Path-sum variogram of a tree: the additive tree metric.
    pub fn from_tree(tree: &SpanningTree, gammas: &VariogramEdgeMap) -> Result<Self> {
        let n = tree.n_nodes();
        let mut mat = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let g = tree_gamma(tree, gammas, i, j)?;
                mat[(i, j)] = g;
                mat[(j, i)] = g;
            }
        }
        Self::new(mat)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

/// Write a variogram matrix as symmetric CSV with a header row of site
/// ids.
pub fn write_variogram_csv(
    gamma: &VariogramMatrix,
    site_ids: &[String],
    path: &std::path::Path,
) -> Result<()> {
    use std::io::Write as _;
    if site_ids.len() != gamma.dim() {
        return Err(Error::Validation(format!(
            "{} site ids for a {}-dimensional variogram",
            site_ids.len(),
            gamma.dim()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", site_ids.join(","))?;
    for i in 0..gamma.dim() {
        let row: Vec<String> = (0..gamma.dim()).map(|j| format!("{}", gamma.get(i, j))).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a symmetric variogram CSV written by [`write_variogram_csv`].
pub fn read_variogram_csv(path: &std::path::Path) -> Result<(Vec<String>, VariogramMatrix)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let ids: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Validation("empty variogram CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let n = ids.len();
    let mut mat = DMatrix::zeros(n, n);
    for (i, line) in lines.enumerate() {
        if i >= n {
            return Err(Error::Integrity("too many variogram rows".into()));
        }
        for (j, cell) in line.split(',').enumerate() {
            if j >= n {
                return Err(Error::Integrity(format!("too many columns in row {i}")));
            }
            mat[(i, j)] = cell.parse().map_err(|_| Error::Parse {
                line: i + 2,
                message: format!("bad variogram entry {cell:?}"),
            })?;
        }
    }
    Ok((ids, VariogramMatrix::new(mat)?))
}

/// The (N-1)x(N-1) positive-definite covariance anchored at one index.
#[derive(Debug, Clone)]
pub struct ConditionalCovariance {
    pub anchor: usize,
    mat: DMatrix<f64>,
}

impl ConditionalCovariance {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

/// The conditional covariance at anchor `k`:
/// entry (i,j) = (Gamma_ik + Gamma_jk - Gamma_ij) / 2 for i,j != k.
pub fn sigma_k(gamma: &VariogramMatrix, k: usize) -> Result<ConditionalCovariance> {
    let n = gamma.dim();
    if k >= n {
        return Err(Error::ParamDomain(format!("anchor {k} out of range {n}")));
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != k).collect();
    let m = n - 1;
    let mut mat = DMatrix::zeros(m, m);
    for (a, &i) in others.iter().enumerate() {
        for (b, &j) in others.iter().enumerate() {
            mat[(a, b)] = 0.5 * (gamma.get(i, k) + gamma.get(j, k) - gamma.get(i, j));
        }
    }
    let eig = mat.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= PD_TOLERANCE * max {
        return Err(Error::InvalidVariogram(format!(
            "conditional covariance at anchor {k} is not strictly positive definite \
             (eigenvalue range [{min:.3e}, {max:.3e}])"
        )));
    }
    Ok(ConditionalCovariance { anchor: k, mat })
}

fn mvn_log_density(z: &[f64], cov: &ConditionalCovariance) -> Result<f64> {
    let m = cov.dim();
    debug_assert_eq!(z.len(), m);
    let chol = cov
        .mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidVariogram("covariance not positive definite".into()))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let zv = nalgebra::DVector::from_column_slice(z);
    let sol = chol.solve(&zv);
    let quad = zv.dot(&sol);
    Ok(-0.5 * (quad + logdet + m as f64 * LOG_2PI))
}

/// Log of the N-variate Hüsler–Reiss intensity anchored at `k`; the value
/// is the same for every anchor.
pub fn log_hr_intensity(x: &[f64], gamma: &VariogramMatrix, k: usize) -> Result<f64> {
    let n = gamma.dim();
    if x.len() != n {
        return Err(Error::ParamDomain(format!(
            "x has length {}, variogram dimension {n}",
            x.len()
        )));
    }
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::ParamDomain("intensity needs all x > 0".into()));
    }
    let cov = sigma_k(gamma, k)?;
    let z: Vec<f64> = (0..n)
        .filter(|&i| i != k)
        .map(|i| (x[i] / x[k]).ln() + 0.5 * gamma.get(i, k))
        .collect();
    let mut log_lead = -2.0 * x[k].ln();
    for (i, &xi) in x.iter().enumerate() {
        if i != k {
            log_lead -= xi.ln();
        }
    }
    Ok(log_lead + mvn_log_density(&z, &cov)?)
}

/// N-variate Hüsler–Reiss intensity.
pub fn hr_intensity(x: &[f64], gamma: &VariogramMatrix, k: usize) -> Result<f64> {
    log_hr_intensity(x, gamma, k).map(f64::exp)
}

/// Bivariate exponent function V(x1, x2; g). At g = 0 (complete
/// dependence) the limit max(1/x1, 1/x2) is returned.
pub fn bivariate_v(x1: f64, x2: f64, g: f64) -> Result<f64> {
    check_pair(x1, x2, g)?;
    if g == 0.0 {
        return Ok((1.0 / x1).max(1.0 / x2));
    }
    let a = g.sqrt();
    let t = (x2 / x1).ln();
    Ok(norm_cdf(0.5 * a + t / a) / x1 + norm_cdf(0.5 * a - t / a) / x2)
}

/// Partial derivative of V in its first argument:
/// V1 = -x1^{-2} Phi(sqrt(g)/2 + log(x2/x1)/sqrt(g)). Always negative.
pub fn bivariate_v1(x1: f64, x2: f64, g: f64) -> Result<f64> {
    check_pair(x1, x2, g)?;
    if g == 0.0 {
        // a.e. derivative of max(1/x1, 1/x2)
        return Ok(if x1 <= x2 { -1.0 / (x1 * x1) } else { 0.0 });
    }
    let a = g.sqrt();
    let t = (x2 / x1).ln();
    Ok(-norm_cdf(0.5 * a + t / a) / (x1 * x1))
}

/// Partial derivative of V in its second argument.
pub fn bivariate_v2(x1: f64, x2: f64, g: f64) -> Result<f64> {
    bivariate_v1(x2, x1, g)
}

/// Bivariate intensity lambda = -d2 V / dx1 dx2.
pub fn pair_intensity(x1: f64, x2: f64, g: f64) -> Result<f64> {
    log_pair_intensity(x1, x2, g).map(f64::exp)
}

/// Log of the bivariate intensity, in closed form.
pub fn log_pair_intensity(x1: f64, x2: f64, g: f64) -> Result<f64> {
    check_pair(x1, x2, g)?;
    if g == 0.0 {
        return Err(Error::ParamDomain(
            "the complete-dependence limit has no bivariate density".into(),
        ));
    }
    let a = g.sqrt();
    let t = (x2 / x1).ln();
    let z = 0.5 * a + t / a;
    Ok(norm_pdf(z).ln() - a.ln() - 2.0 * x1.ln() - x2.ln())
}

fn check_pair(x1: f64, x2: f64, g: f64) -> Result<()> {
    if !(x1 > 0.0 && x2 > 0.0) {
        return Err(Error::ParamDomain(format!(
            "pair coordinates must be positive, got ({x1}, {x2})"
        )));
    }
    if !(g >= 0.0) || !g.is_finite() {
        return Err(Error::ParamDomain(format!(
            "variogram value must be finite and nonnegative, got {g}"
        )));
    }
    Ok(())
}

/// Pairwise χ-measure of a Hüsler–Reiss pair:
/// chi = 2 - V(1,1; g) = 2 * Phi_bar(sqrt(g)/2).
///
/// Computed literally as 2 - 2*Phi(sqrt(g)/2), the same floating-point
/// path as `2 - bivariate_v(1, 1, g)`, so the two agree bit-for-bit.
pub fn chi_hr(g: f64) -> f64 {
    if g == 0.0 {
        return 1.0;
    }
    2.0 - 2.0 * norm_cdf(0.5 * g.sqrt())
}

/// Monte Carlo estimate of the N-variate extremal coefficient V(1,...,1)
/// of a tree-structured model, with its standard error.
///
/// Uses the anchored profile representation: with R the profile rooted at
/// node 0 (R_0 = 1, log-Gaussian increments along tree edges),
/// V(1) = E[max_i R_i].
pub fn mc_exponent_at_one(
    tree: &SpanningTree,
    gammas: &VariogramEdgeMap,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::ParamDomain("need at least 2 samples".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let order = tree.traversal_from(0);
    let n = tree.n_nodes();
    let mut log_r = vec![0.0; n];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_samples {
        log_r[0] = 0.0;
        for &(parent, child) in &order {
            let g = gammas.get(parent, child).ok_or_else(|| {
                Error::Config(format!("no variogram value on edge ({parent},{child})"))
            })?;
            log_r[child] = log_r[parent] + gaussian_increment(&mut rng, g);
        }
        let max = log_r
            .iter()
            .map(|&lr| lr.exp())
            .fold(f64::NEG_INFINITY, f64::max);
        sum += max;
        sumsq += max * max;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sumsq - n * mean * mean) / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// One log-scale edge increment W ~ N(-g/2, g); degenerate at g = 0.
pub(crate) fn gaussian_increment(rng: &mut Xoshiro256PlusPlus, g: f64) -> f64 {
    if g <= 0.0 {
        return 0.0;
    }
    use rand::Rng;
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    -0.5 * g + g.sqrt() * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::norm_sf;
    use rand::Rng;

    #[test]
    fn sigma_k_examples() {
        let g = VariogramMatrix::pair(1.7).unwrap();
        let cov = sigma_k(&g, 1).unwrap();
        assert_eq!(cov.dim(), 1);
        assert!((cov.as_matrix()[(0, 0)] - 1.7).abs() < 1e-15);

        // chain with Gamma12 = 1, Gamma23 = 2, Gamma13 = 3
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0]);
        let g = VariogramMatrix::new(m).unwrap();
        let cov = sigma_k(&g, 0).unwrap();
        let want = [[1.0, 1.0], [1.0, 3.0]];
        for (a, row) in want.iter().enumerate() {
            for (b, w) in row.iter().enumerate() {
                assert!((cov.as_matrix()[(a, b)] - w).abs() < 1e-14);
            }
        }

        // complete-dependence limit: all-zero off-diagonal is rejected
        let zero = VariogramMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(sigma_k(&zero, 0), Err(Error::InvalidVariogram(_))));
    }

    fn random_variogram(n: usize, rng: &mut Xoshiro256PlusPlus) -> VariogramMatrix {
        // Build from a random tree metric plus jitter: guarantees validity.
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let tree = SpanningTree::new(n, edges.clone()).unwrap();
        let gammas = VariogramEdgeMap::from_pairs(
            edges.iter().map(|&e| (e, rng.gen_range(0.3..2.5))),
        )
        .unwrap();
        VariogramMatrix::from_tree(&tree, &gammas).unwrap()
    }

    #[test]
    fn intensity_homogeneity_and_anchor_invariance() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        for n in [2usize, 3, 4] {
            let gamma = random_variogram(n, &mut rng);
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..4.0)).collect();
                let base = hr_intensity(&x, &gamma, 0).unwrap();
                for k in 1..n {
                    let other = hr_intensity(&x, &gamma, k).unwrap();
                    assert!(
                        ((other - base) / base).abs() < 1e-10,
                        "anchor {k}: {other} vs {base}"
                    );
                }
                let c = rng.gen_range(0.5..3.0);
                let xc: Vec<f64> = x.iter().map(|&v| c * v).collect();
                let scaled = hr_intensity(&xc, &gamma, 0).unwrap();
                let want = c.powi(-(n as i32 + 1)) * base;
                assert!(
                    ((scaled - want) / want).abs() < 1e-10,
                    "homogeneity at n={n}, c={c}"
                );
            }
        }
    }

    #[test]
    fn bivariate_intensity_matches_anchored_form() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        for _ in 0..30 {
            let g = rng.gen_range(0.05..6.0);
            let x1 = rng.gen_range(0.2..5.0);
            let x2 = rng.gen_range(0.2..5.0);
            let gamma = VariogramMatrix::pair(g).unwrap();
            let a = hr_intensity(&[x1, x2], &gamma, 0).unwrap();
            let b = pair_intensity(x1, x2, g).unwrap();
            assert!(((a - b) / a).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn exponent_function_examples() {
        // V(1,1;4) = 2*Phi(1)
        let v = bivariate_v(1.0, 1.0, 4.0).unwrap();
        assert!((v - 1.682689492137086).abs() < 1e-12, "v = {v}");
        // independence limit
        let v = bivariate_v(1.0, 1.0, 1e8).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        // homogeneity of order -1
        let v1 = bivariate_v(0.7, 2.1, 1.3).unwrap();
        let v3 = bivariate_v(3.0 * 0.7, 3.0 * 2.1, 1.3).unwrap();
        assert!((v3 - v1 / 3.0).abs() < 1e-14);
        // complete dependence
        assert_eq!(bivariate_v(0.5, 4.0, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn v1_matches_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let h = 1e-5;
        for _ in 0..50 {
            let g = rng.gen_range(0.1..8.0);
            let x1 = rng.gen_range(0.3..4.0);
            let x2 = rng.gen_range(0.3..4.0);
            let fd = (bivariate_v(x1 + h, x2, g).unwrap() - bivariate_v(x1 - h, x2, g).unwrap())
                / (2.0 * h);
            let an = bivariate_v1(x1, x2, g).unwrap();
            assert!((an - fd).abs() < 1e-6, "g={g} x=({x1},{x2}): {an} vs {fd}");
            let fd2 = (bivariate_v(x1, x2 + h, g).unwrap() - bivariate_v(x1, x2 - h, g).unwrap())
                / (2.0 * h);
            let an2 = bivariate_v2(x1, x2, g).unwrap();
            assert!((an2 - fd2).abs() < 1e-6);
            assert!(an < 0.0 && an2 < 0.0);
        }
    }

    #[test]
    fn v1_independence_limit() {
        let v1 = bivariate_v1(1.7, 0.9, 1e8).unwrap();
        assert!((v1 + 1.0 / (1.7 * 1.7)).abs() < 1e-9, "v1 = {v1}");
    }

    #[test]
    fn mixed_second_derivative_is_nonnegative_and_equals_intensity() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        let h = 1e-4;
        for _ in 0..30 {
            let g = rng.gen_range(0.2..6.0);
            let x1 = rng.gen_range(0.5..3.0);
            let x2 = rng.gen_range(0.5..3.0);
            // -dV1/dx2 should equal the intensity and be nonnegative
            let fd = -(bivariate_v1(x1, x2 + h, g).unwrap()
                - bivariate_v1(x1, x2 - h, g).unwrap())
                / (2.0 * h);
            let lam = pair_intensity(x1, x2, g).unwrap();
            assert!(fd >= 0.0);
            assert!(
                ((fd - lam) / lam).abs() < 1e-5,
                "g={g}: fd {fd} vs lambda {lam}"
            );
        }
    }

    #[test]
    fn chi_examples_and_consistency() {
        assert_eq!(chi_hr(0.0), 1.0);
        assert!(chi_hr(1e9) < 1e-10);
        assert!((chi_hr(4.0) - 0.317310507862914).abs() < 1e-12);
        // exact consistency with 2 - V(1,1;g)
        for &g in &[0.1, 0.5, 1.0, 2.0, 4.0, 9.0, 25.0] {
            let via_v = 2.0 - bivariate_v(1.0, 1.0, g).unwrap();
            assert_eq!(chi_hr(g), via_v, "g = {g}");
        }
        // strictly decreasing onto (0, 1]
        let mut prev = chi_hr(0.0);
        for i in 1..200 {
            let g = i as f64 * 0.1;
            let c = chi_hr(g);
            assert!(c < prev && c > 0.0 && c <= 1.0);
            prev = c;
        }
        // and it agrees with the survival-function form
        for i in 0..100 {
            let g = i as f64 * 0.25;
            assert!((chi_hr(g) - 2.0 * norm_sf(0.5 * g.sqrt())).abs() < 1e-15);
        }
    }

    #[test]
    fn mc_exponent_matches_closed_form_pair() {
        let tree = SpanningTree::new(2, vec![(0, 1)]).unwrap();
        let gammas = VariogramEdgeMap::from_pairs([((0, 1), 4.0)]).unwrap();
        let (est, se) = mc_exponent_at_one(&tree, &gammas, 200_000, 33).unwrap();
        let truth = bivariate_v(1.0, 1.0, 4.0).unwrap();
        assert!(
            (est - truth).abs() < 3.0 * se,
            "est {est} +- {se} vs {truth}"
        );

        // complete dependence: V(1) -> 1
        let gammas0 = VariogramEdgeMap::from_pairs([((0, 1), 1e-12)]).unwrap();
        let (est0, _) = mc_exponent_at_one(&tree, &gammas0, 10_000, 1).unwrap();
        assert!((est0 - 1.0).abs() < 1e-4, "est0 = {est0}");
    }

    #[test]
    fn variogram_csv_round_trip() {
        let tree = SpanningTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let gammas =
            VariogramEdgeMap::from_pairs([((0, 1), 0.75), ((1, 2), 2.5)]).unwrap();
        let gamma = VariogramMatrix::from_tree(&tree, &gammas).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let path = std::env::temp_dir().join("extremix-variogram-roundtrip.csv");
        write_variogram_csv(&gamma, &ids, &path).unwrap();
        let (back_ids, back) = read_variogram_csv(&path).unwrap();
        assert_eq!(ids, back_ids);
        assert_eq!(gamma, back);
    }

    #[test]
    fn mc_exponent_stable_across_seeds() {
        let tree = SpanningTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let gammas = VariogramEdgeMap::constant(&[(0, 1), (1, 2)], 1.0).unwrap();
        let (a, sa) = mc_exponent_at_one(&tree, &gammas, 100_000, 1).unwrap();
        let (b, sb) = mc_exponent_at_one(&tree, &gammas, 100_000, 2).unwrap();
        let se = (sa * sa + sb * sb).sqrt();
        assert!((a - b).abs() < 3.0 * se, "{a} vs {b} (se {se})");
    }
}

//! The assembled tree-mixture model: spanning-tree prior probabilities,
//! the mixture density in both its explicit-sum and determinant forms,
//! tree and mixture χ-measures, the empirical χ estimator, and the
//! bias-correction scale.
//!
//! Densities are reported without the N-variate normalizing constant
//! V(1,...,1), which the fitting objective never evaluates; both density
//! routes share that convention, so they agree exactly.

use crate::error::{Error, Result};
use crate::graphs::{
    tree_gamma, EdgeWeightMatrix, SpanningTree, TreeEnsemble, VariogramEdgeMap,
};
use crate::hr::{chi_hr, log_pair_intensity};
use crate::stats::empirical_quantile;

/// A fitted mixture of tree-structured models over one graph.
#[derive(Debug, Clone)]
pub struct TreeMixtureModel {
    pub ensemble: TreeEnsemble,
    pub gammas: VariogramEdgeMap,
    pub beta: EdgeWeightMatrix,
    /// Prior probability of each ensemble tree; sums to one.
    pub prior: Vec<f64>,
    /// Bias-correction scale in (0, 1].
    pub a_opt: f64,
}

impl TreeMixtureModel {
    pub fn new(
        ensemble: TreeEnsemble,
        gammas: VariogramEdgeMap,
        beta: EdgeWeightMatrix,
        a_opt: f64,
    ) -> Result<Self> {
        if !(a_opt > 0.0 && a_opt <= 1.0) {
            return Err(Error::ParamDomain(format!(
                "bias scale must lie in (0, 1], got {a_opt}"
            )));
        }
        let prior = tree_prior_probs(&ensemble, &beta)?;
        Ok(Self {
            ensemble,
            gammas,
            beta,
            prior,
            a_opt,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.beta.n_nodes()
    }
}

/// Renormalized spanning-tree prior over an ensemble: p(T) proportional to
/// the product of beta over the tree's edges.
pub fn tree_prior_probs(ensemble: &TreeEnsemble, beta: &EdgeWeightMatrix) -> Result<Vec<f64>> {
    if ensemble.is_empty() {
        return Err(Error::Validation("empty tree ensemble".into()));
    }
    let log_w: Vec<f64> = ensemble
        .trees
        .iter()
        .map(|t| beta.log_tree_weight(t))
        .collect::<Result<_>>()?;
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegeneratePrior);
    }
    let unnorm: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.iter().map(|u| u / total).collect())
}

fn check_support(x: &[f64]) -> Result<()> {
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::ParamDomain(
            "density support requires all coordinates positive".into(),
        ));
    }
    if !x.iter().cloned().fold(f64::NEG_INFINITY, f64::max).gt(&1.0) {
        return Err(Error::ParamDomain(
            "density support requires max coordinate > 1".into(),
        ));
    }
    Ok(())
}

/// log lambda*_ij = log of the pair intensity divided by x_i^{-2} x_j^{-2}.
fn log_pair_intensity_star(xi: f64, xj: f64, g: f64) -> Result<f64> {
    Ok(log_pair_intensity(xi, xj, g)? + 2.0 * xi.ln() + 2.0 * xj.ln())
}

/// Log of the unnormalized mixture density as the explicit sum over
/// ensemble trees.
pub fn log_mixture_density_explicit(x: &[f64], model: &TreeMixtureModel) -> Result<f64> {
    check_support(x)?;
    let mut terms: Vec<f64> = Vec::with_capacity(model.ensemble.len());
    for (tree, &p) in model.ensemble.trees.iter().zip(&model.prior) {
        if p <= 0.0 {
            continue;
        }
        let mut log_term = p.ln();
        for &(i, j) in tree.edges() {
            let g = model.gammas.get(i, j).ok_or_else(|| {
                Error::Config(format!("no variogram value on tree edge ({i},{j})"))
            })?;
            log_term += log_pair_intensity_star(x[i], x[j], g)?;
        }
        terms.push(log_term);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok(lse - 2.0 * x.iter().map(|v| v.ln()).sum::<f64>())
}

/// Unnormalized mixture density, explicit-sum form.
pub fn mixture_density_explicit(x: &[f64], model: &TreeMixtureModel) -> Result<f64> {
    log_mixture_density_explicit(x, model).map(f64::exp)
}

/// Log of the unnormalized mixture density in determinant form:
/// prod x_i^{-2} * det Q(beta .* lambda*) / det Q(beta).
///
/// When the prior is supported on all spanning trees of the graph, this
/// equals the explicit sum exactly (matrix-tree theorem).
pub fn log_mixture_density_det(
    x: &[f64],
    gammas: &VariogramEdgeMap,
    beta: &EdgeWeightMatrix,
) -> Result<f64> {
    check_support(x)?;
    let n = beta.n_nodes();
    if x.len() != n {
        return Err(Error::ParamDomain(format!(
            "x has length {}, graph has {n} nodes",
            x.len()
        )));
    }
    let edges = beta.edges();
    let mut scaled = Vec::with_capacity(edges.len());
    for (&(i, j), &w) in edges.iter().zip(beta.weights()) {
        let g = gammas
            .get(i, j)
            .ok_or_else(|| Error::Config(format!("no variogram value on edge ({i},{j})")))?;
        scaled.push(w * log_pair_intensity_star(x[i], x[j], g)?.exp());
    }
    let logdet_scaled = crate::graphs::weighted_minor_logdet(n, edges, &scaled, n - 1)?;
    let logdet_beta = crate::graphs::weighted_minor_logdet(n, edges, beta.weights(), n - 1)?;
    Ok(logdet_scaled - logdet_beta - 2.0 * x.iter().map(|v| v.ln()).sum::<f64>())
}

/// Unnormalized mixture density, determinant form.
pub fn mixture_density_det(
    x: &[f64],
    gammas: &VariogramEdgeMap,
    beta: &EdgeWeightMatrix,
) -> Result<f64> {
    log_mixture_density_det(x, gammas, beta).map(f64::exp)
}

/// χ-measure of a pair under a single tree, with the variogram scaled by
/// the bias factor `a`.
pub fn chi_tree(
    tree: &SpanningTree,
    gammas: &VariogramEdgeMap,
    i: usize,
    j: usize,
    a: f64,
) -> Result<f64> {
    check_scale(a)?;
    Ok(chi_hr(a * tree_gamma(tree, gammas, i, j)?))
}

/// χ-measure of a pair under the fitted mixture: the prior-weighted
/// average of the per-tree values.
pub fn chi_mixture(model: &TreeMixtureModel, i: usize, j: usize, a: f64) -> Result<f64> {
    check_scale(a)?;
    let mut total = 0.0;
    for (tree, &p) in model.ensemble.trees.iter().zip(&model.prior) {
        total += p * chi_tree(tree, &model.gammas, i, j, a)?;
    }
    Ok(total)
}

fn check_scale(a: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::ParamDomain(format!(
            "bias scale must lie in (0, 1], got {a}"
        )));
    }
    Ok(())
}

/// Empirical pairwise χ at quantile level `q`, averaged over the two
/// conditioning directions; `None` when a conditioning count is zero.
/// NaN entries are missing; only times where both sites are observed
/// enter the counts.
pub fn empirical_chi(
    series_i: &[f64],
    series_j: &[f64],
    q: f64,
) -> Result<Option<f64>> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::ParamDomain(format!(
            "quantile level must lie in (0,1), got {q}"
        )));
    }
    let paired: Vec<(f64, f64)> = series_i
        .iter()
        .zip(series_j)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(&a, &b)| (a, b))
        .collect();
    if paired.is_empty() {
        return Ok(None);
    }
    let mut xs: Vec<f64> = paired.iter().map(|p| p.0).collect();
    let mut ys: Vec<f64> = paired.iter().map(|p| p.1).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qi = empirical_quantile(&xs, q);
    let qj = empirical_quantile(&ys, q);
    let n_i = paired.iter().filter(|p| p.0 > qi).count();
    let n_j = paired.iter().filter(|p| p.1 > qj).count();
    let n_both = paired.iter().filter(|p| p.0 > qi && p.1 > qj).count();
    if n_i == 0 || n_j == 0 {
        return Ok(None);
    }
    Ok(Some(
        0.5 * (n_both as f64 / n_j as f64 + n_both as f64 / n_i as f64),
    ))
}

/// Squared-error loss of the model χ against empirical values over a pair
/// set, as a function of the bias scale.
pub fn bias_scale_loss(model: &TreeMixtureModel, pairs: &[(usize, usize, f64)], a: f64) -> Result<f64> {
    let mut loss = 0.0;
    for &(i, j, chi_emp) in pairs {
        let chi_model = chi_mixture(model, i, j, a)?;
        loss += (chi_emp - chi_model) * (chi_emp - chi_model);
    }
    Ok(loss)
}

/// Fit the bias-correction scale: the minimizer over (0, 1] of the squared
/// distance between empirical and model χ on the given pairs. A 99-point
/// grid scan (ties broken toward a = 1) is refined by golden section to
/// better than ±0.005.
pub fn fit_bias_scale(model: &TreeMixtureModel, pairs: &[(usize, usize, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData {
            what: "chi pairs for bias correction".into(),
            needed: 1,
            have: 0,
        });
    }
    // grid over (0.01, 1]: 0.02, 0.03, ..., 1.00, scanned from 1 downward
    // so exact ties keep the largest a
    let mut best_a = 1.0;
    let mut best_loss = bias_scale_loss(model, pairs, 1.0)?;
    for k in (2..100).rev() {
        let a = k as f64 / 100.0;
        let loss = bias_scale_loss(model, pairs, a)?;
        if loss < best_loss {
            best_loss = loss;
            best_a = a;
        }
    }
    // golden-section refinement of the winning grid cell
    const INV_PHI: f64 = 0.618033988749894848;
    let mut left = (best_a - 0.01).max(1e-6);
    let mut right = (best_a + 0.01).min(1.0);
    let mut x1 = right - INV_PHI * (right - left);
    let mut x2 = left + INV_PHI * (right - left);
    let mut f1 = bias_scale_loss(model, pairs, x1)?;
    let mut f2 = bias_scale_loss(model, pairs, x2)?;
    while right - left > 1e-4 {
        if f1 < f2 {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - INV_PHI * (right - left);
            f1 = bias_scale_loss(model, pairs, x1)?;
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + INV_PHI * (right - left);
            f2 = bias_scale_loss(model, pairs, x2)?;
        }
    }
    let mid = 0.5 * (left + right);
    if bias_scale_loss(model, pairs, mid)? < best_loss {
        best_loss = bias_scale_loss(model, pairs, mid)?;
        best_a = mid;
    }
    // a = 1 stays in the candidate set: ties break toward it
    if bias_scale_loss(model, pairs, 1.0)? <= best_loss {
        return Ok(1.0);
    }
    Ok(best_a.clamp(1e-6, 1.0))
}

/// All pairs within `max_hops` steps on the graph (breadth-first), the
/// pair set entering the bias-correction loss.
pub fn pairs_within_graph_distance(
    n: usize,
    edges: &[(usize, usize)],
    max_hops: usize,
) -> Vec<(usize, usize)> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut pairs = Vec::new();
    for start in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if dist[v] == max_hops {
                continue;
            }
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        for (other, &d) in dist.iter().enumerate() {
            if other > start && d <= max_hops {
                pairs.push((start, other));
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_lattice, enumerate_spanning_trees};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn triangle_ensemble() -> (TreeEnsemble, Vec<(usize, usize)>) {
        let edges = vec![(0, 1), (0, 2), (1, 2)];
        let trees = enumerate_spanning_trees(3, &edges).unwrap();
        (
            TreeEnsemble {
                trees,
                raw_draws: 3,
            },
            edges,
        )
    }

    #[test]
    fn prior_examples() {
        let (ens, edges) = triangle_ensemble();
        // singleton
        let single = TreeEnsemble::singleton(ens.trees[0].clone());
        let beta = EdgeWeightMatrix::new(3, &edges, vec![2.0, 3.0, 5.0]).unwrap();
        assert_eq!(tree_prior_probs(&single, &beta).unwrap(), vec![1.0]);

        // triangle with weights (a, b, c) on edges (01, 02, 12):
        // tree {01,02} ~ ab, {01,12} ~ ac, {02,12} ~ bc
        let probs = tree_prior_probs(&ens, &beta).unwrap();
        let norm = 2.0 * 3.0 + 2.0 * 5.0 + 3.0 * 5.0;
        for (tree, p) in ens.trees.iter().zip(&probs) {
            let prod: f64 = tree
                .edges()
                .iter()
                .map(|&(i, j)| beta.weight_of(i, j).unwrap())
                .product();
            assert!((p - prod / norm).abs() < 1e-12);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // uniform weights on a symmetric ensemble: equal priors
        let beta_u = EdgeWeightMatrix::new(3, &edges, vec![0.7; 3]).unwrap();
        let probs_u = tree_prior_probs(&ens, &beta_u).unwrap();
        for p in &probs_u {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_is_scale_invariant_and_rejects_degenerate() {
        let (ens, edges) = triangle_ensemble();
        let beta1 = EdgeWeightMatrix::new(3, &edges, vec![0.1, 0.5, 0.9]).unwrap();
        let beta2 = EdgeWeightMatrix::new(3, &edges, vec![10.0, 50.0, 90.0]).unwrap();
        let p1 = tree_prior_probs(&ens, &beta1).unwrap();
        let p2 = tree_prior_probs(&ens, &beta2).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
        let beta0 = EdgeWeightMatrix::new(3, &edges, vec![0.0; 3]).unwrap();
        assert!(matches!(
            tree_prior_probs(&ens, &beta0),
            Err(Error::DegeneratePrior)
        ));
    }

    fn full_model(
        n: usize,
        edges: &[(usize, usize)],
        rng: &mut Xoshiro256PlusPlus,
    ) -> TreeMixtureModel {
        let trees = enumerate_spanning_trees(n, edges).unwrap();
        let ensemble = TreeEnsemble {
            raw_draws: trees.len(),
            trees,
        };
        let gammas = VariogramEdgeMap::from_pairs(
            edges.iter().map(|&e| (e, rng.gen_range(0.3..3.0))),
        )
        .unwrap();
        let weights: Vec<f64> = (0..edges.len()).map(|_| rng.gen_range(0.2..1.5)).collect();
        let beta = EdgeWeightMatrix::new(n, edges, weights).unwrap();
        TreeMixtureModel::new(ensemble, gammas, beta, 1.0).unwrap()
    }

    fn random_support_point(n: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..3.0)).collect();
        let k = rng.gen_range(0..n);
        x[k] = rng.gen_range(1.1..5.0);
        x
    }

    #[test]
    fn det_form_equals_explicit_sum_on_full_ensembles() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
        // 4-cycle
        let cycle = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let model = full_model(4, &cycle, &mut rng);
        assert_eq!(model.ensemble.len(), 4);
        for _ in 0..100 {
            let x = random_support_point(4, &mut rng);
            let e = log_mixture_density_explicit(&x, &model).unwrap();
            let d = log_mixture_density_det(&x, &model.gammas, &model.beta).unwrap();
            assert!(
                (e - d).abs() < 1e-10 * (1.0 + e.abs()),
                "x={x:?}: explicit {e} vs det {d}"
            );
        }
    }

    #[test]
    fn det_form_equals_explicit_sum_up_to_six_nodes() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(41);
        for n in 3..=6usize {
            // random connected graph: chain backbone plus extras
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if i + 1 == j || rng.gen_bool(0.5) {
                        edges.push((i, j));
                    }
                }
            }
            let model = full_model(n, &edges, &mut rng);
            for _ in 0..25 {
                let x = random_support_point(n, &mut rng);
                let e = log_mixture_density_explicit(&x, &model).unwrap();
                let d = log_mixture_density_det(&x, &model.gammas, &model.beta).unwrap();
                assert!(
                    (e - d).abs() < 1e-10 * (1.0 + e.abs()),
                    "n={n}, x={x:?}: explicit {e} vs det {d}"
                );
            }
        }
    }

    #[test]
    fn density_reduces_to_single_tree_product_and_pair_intensity() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(32);
        // N=2: the mixture density IS the pair intensity
        let edges = vec![(0, 1)];
        let tree = SpanningTree::new(2, vec![(0, 1)]).unwrap();
        let gammas = VariogramEdgeMap::from_pairs([((0, 1), 1.7)]).unwrap();
        let beta = EdgeWeightMatrix::new(2, &edges, vec![1.0]).unwrap();
        let model =
            TreeMixtureModel::new(TreeEnsemble::singleton(tree), gammas, beta, 1.0).unwrap();
        for _ in 0..20 {
            let x = random_support_point(2, &mut rng);
            let f = mixture_density_explicit(&x, &model).unwrap();
            let lam = crate::hr::pair_intensity(x[0], x[1], 1.7).unwrap();
            assert!((f - lam).abs() < 1e-12 * lam.max(1e-12));
        }

        // tree-shaped graph: determinant ratio collapses to the product
        let chain = vec![(0, 1), (1, 2)];
        let tree = SpanningTree::new(3, chain.clone()).unwrap();
        let gammas =
            VariogramEdgeMap::from_pairs([((0, 1), 0.8), ((1, 2), 2.2)]).unwrap();
        let beta = EdgeWeightMatrix::new(3, &chain, vec![0.3, 0.9]).unwrap();
        let model = TreeMixtureModel::new(
            TreeEnsemble::singleton(tree),
            gammas.clone(),
            beta.clone(),
            1.0,
        )
        .unwrap();
        for _ in 0..20 {
            let x = random_support_point(3, &mut rng);
            let e = log_mixture_density_explicit(&x, &model).unwrap();
            let d = log_mixture_density_det(&x, &gammas, &beta).unwrap();
            assert!((e - d).abs() < 1e-10 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn det_form_invariant_to_beta_rescaling() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(33);
        let cycle = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let model = full_model(4, &cycle, &mut rng);
        let x = random_support_point(4, &mut rng);
        let d1 = log_mixture_density_det(&x, &model.gammas, &model.beta).unwrap();
        let scaled = EdgeWeightMatrix::new(
            4,
            &cycle,
            model.beta.weights().iter().map(|w| w * 37.5).collect(),
        )
        .unwrap();
        let d2 = log_mixture_density_det(&x, &model.gammas, &scaled).unwrap();
        assert!((d1 - d2).abs() < 1e-10 * (1.0 + d1.abs()));
    }

    #[test]
    fn density_log_value_finite_on_random_support() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(34);
        let g = build_lattice(
            &[(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)],
            true,
        )
        .unwrap();
        let model = full_model(4, &g.edge_pairs(), &mut rng);
        for _ in 0..200 {
            let x = random_support_point(4, &mut rng);
            let l = log_mixture_density_explicit(&x, &model).unwrap();
            assert!(l.is_finite(), "log density not finite at {x:?}");
        }
        // off-support points are rejected
        assert!(mixture_density_explicit(&[0.5, 0.5, 0.5, 0.9], &model).is_err());
        assert!(mixture_density_explicit(&[-1.0, 2.0, 0.5, 0.5], &model).is_err());
    }

    #[test]
    fn chi_tree_examples() {
        let tree = SpanningTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let gammas = VariogramEdgeMap::constant(&[(0, 1), (1, 2)], 2.0).unwrap();
        assert_eq!(chi_tree(&tree, &gammas, 1, 1, 1.0).unwrap(), 1.0);
        // path sum 4: chi = 2 PhiBar(1)
        let c = chi_tree(&tree, &gammas, 0, 2, 1.0).unwrap();
        assert!((c - 0.317310507862914).abs() < 1e-12, "c = {c}");
        // a -> 0+: chi -> 1
        let c = chi_tree(&tree, &gammas, 0, 2, 1e-12).unwrap();
        assert!(c > 0.999999);
        assert!(chi_tree(&tree, &gammas, 0, 2, 0.0).is_err());
        assert!(chi_tree(&tree, &gammas, 0, 2, 1.1).is_err());
    }

    #[test]
    fn chi_mixture_examples_and_monotonicity() {
        // two chains over 3 nodes sharing node 0
        let t_a = SpanningTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let t_b = SpanningTree::new(3, vec![(0, 1), (0, 2)]).unwrap();
        let edges = vec![(0, 1), (0, 2), (1, 2)];
        let gammas = VariogramEdgeMap::constant(&edges, 1.0).unwrap();
        let beta = EdgeWeightMatrix::new(3, &edges, vec![1.0; 3]).unwrap();
        let ens = TreeEnsemble {
            trees: vec![t_a.clone(), t_b.clone()],
            raw_draws: 2,
        };
        let model = TreeMixtureModel::new(ens, gammas.clone(), beta.clone(), 1.0).unwrap();
        // equal priors: chi(1,2) averages path sums 1 (edge) and 2 (via 0)
        let want = 0.5 * (chi_hr(1.0) + chi_hr(2.0));
        let got = chi_mixture(&model, 1, 2, 1.0).unwrap();
        assert!((got - want).abs() < 1e-12);

        // singleton ensemble equals chi_tree exactly
        let single = TreeMixtureModel::new(
            TreeEnsemble::singleton(t_a.clone()),
            gammas.clone(),
            beta,
            1.0,
        )
        .unwrap();
        assert_eq!(
            chi_mixture(&single, 0, 2, 0.7).unwrap(),
            chi_tree(&t_a, &gammas, 0, 2, 0.7).unwrap()
        );

        // nonincreasing in a, bounded in (0, 1]
        let mut prev = 1.0f64;
        for k in 1..=20 {
            let a = k as f64 / 20.0;
            let c = chi_mixture(&model, 0, 2, a).unwrap();
            assert!(c <= prev + 1e-15 && c > 0.0 && c <= 1.0);
            prev = c;
        }
    }

    #[test]
    fn chi_with_vanishing_gamma_is_one() {
        let t = SpanningTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let gammas = VariogramEdgeMap::constant(&[(0, 1), (1, 2)], 1e-300).unwrap();
        let edges = vec![(0, 1), (1, 2)];
        let beta = EdgeWeightMatrix::new(3, &edges, vec![1.0, 1.0]).unwrap();
        let model = TreeMixtureModel::new(
            TreeEnsemble::singleton(t.clone()),
            gammas.clone(),
            beta,
            1.0,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((chi_tree(&t, &gammas, i, j, 1.0).unwrap() - 1.0).abs() < 1e-12);
                assert!((chi_mixture(&model, i, j, 1.0).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empirical_chi_examples() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(35);
        // identical series: chi = 1
        let xs: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..10.0)).collect();
        assert_eq!(empirical_chi(&xs, &xs, 0.95).unwrap(), Some(1.0));

        // independent series at q: close to 1 - q
        let n = 40_000;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let chi = empirical_chi(&a, &b, 0.95).unwrap().unwrap();
        let se = (0.05f64 * 0.95 / (n as f64 * 0.05)).sqrt();
        assert!((chi - 0.05).abs() < 3.0 * se, "chi = {chi}");

        // degenerate series: threshold equals every value, no exceedances
        let flat = vec![2.0; 100];
        assert_eq!(empirical_chi(&flat, &flat, 0.95).unwrap(), None);
        assert!(empirical_chi(&a, &b, 1.0).is_err());
    }

    #[test]
    fn bias_scale_recovery() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(36);
        let cycle = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let model = full_model(4, &cycle, &mut rng);
        let pair_ids = pairs_within_graph_distance(4, &cycle, 3);

        // chi generated exactly from the model at a = 1
        let pairs: Vec<(usize, usize, f64)> = pair_ids
            .iter()
            .map(|&(i, j)| (i, j, chi_mixture(&model, i, j, 1.0).unwrap()))
            .collect();
        assert_eq!(fit_bias_scale(&model, &pairs).unwrap(), 1.0);

        // chi from the model with Gamma halved: a_opt near 0.5
        let halved = TreeMixtureModel::new(
            model.ensemble.clone(),
            model.gammas.scaled(0.5),
            model.beta.clone(),
            1.0,
        )
        .unwrap();
        let pairs: Vec<(usize, usize, f64)> = pair_ids
            .iter()
            .map(|&(i, j)| (i, j, chi_mixture(&halved, i, j, 1.0).unwrap()))
            .collect();
        let a = fit_bias_scale(&model, &pairs).unwrap();
        assert!((a - 0.5).abs() < 0.05, "a_opt = {a}");

        // the loss at a_opt never exceeds the loss at a = 1
        let l_opt = bias_scale_loss(&model, &pairs, a).unwrap();
        let l_one = bias_scale_loss(&model, &pairs, 1.0).unwrap();
        assert!(l_opt <= l_one);
    }

    #[test]
    fn graph_distance_pairs() {
        // chain 0-1-2-3-4: hops <= 3 excludes only (0,4)
        let chain = vec![(0, 1), (1, 2), (2, 3), (3, 4)];
        let pairs = pairs_within_graph_distance(5, &chain, 3);
        assert!(!pairs.contains(&(0, 4)));
        assert_eq!(pairs.len(), 9);
    }
}

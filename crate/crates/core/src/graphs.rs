//! Lattice graphs, spanning trees, matrix-tree determinants, and
//! direction-weighted random spanning-tree sampling.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Orientation of a lattice edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// West–East.
    H,
    /// North–South.
    V,
    /// NW–SE diagonal.
    D1,
    /// SW–NE diagonal.
    D2,
}

impl Orientation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Orientation::H => "H",
            Orientation::V => "V",
            Orientation::D1 => "D1",
            Orientation::D2 => "D2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeEdge {
    pub i: usize,
    pub j: usize,
    pub orientation: Orientation,
}

/// A connected simple graph over grid sites, edges tagged by orientation.
#[derive(Debug, Clone)]
pub struct LatticeGraph {
    pub coords: Vec<(f64, f64)>,
    pub edges: Vec<LatticeEdge>,
}

impl LatticeGraph {
    pub fn n_sites(&self) -> usize {
        self.coords.len()
    }

    /// Edge endpoints as normalized (i, j) pairs with i < j.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }
}

/// Snap floating-point grid coordinates to integer indices along one axis.
fn grid_indices(values: &[f64]) -> Vec<i64> {
    let mut uniq: Vec<f64> = values.to_vec();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let origin = uniq[0];
    let spacing = uniq
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !spacing.is_finite() {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - origin) / spacing).round() as i64)
        .collect()
}

/// Build the regular-lattice graph over grid sites: 4-neighborhood edges,
/// plus both diagonals when `diagonals` is set. The grid spacing is
/// inferred as the smallest positive coordinate gap per axis, so a thinned
/// or partial grid still connects its grid-adjacent cells.
pub fn build_lattice(coords: &[(f64, f64)], diagonals: bool) -> Result<LatticeGraph> {
    let lons: Vec<f64> = coords.iter().map(|c| c.0).collect();
    let lats: Vec<f64> = coords.iter().map(|c| c.1).collect();
    let ix = grid_indices(&lons);
    let iy = grid_indices(&lats);

    let mut cell: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (s, key) in ix.iter().zip(&iy).map(|(&x, &y)| (x, y)).enumerate() {
        if cell.insert(key, s).is_some() {
            return Err(Error::Validation(format!(
                "duplicate grid cell at indices {key:?}"
            )));
        }
    }

    let mut edges = Vec::new();
    for s in 0..coords.len() {
        let (x, y) = (ix[s], iy[s]);
        let mut push = |dx: i64, dy: i64, orientation: Orientation| {
            if let Some(&t) = cell.get(&(x + dx, y + dy)) {
                edges.push(LatticeEdge {
                    i: s.min(t),
                    j: s.max(t),
                    orientation,
                });
            }
        };
        push(1, 0, Orientation::H);
        push(0, 1, Orientation::V);
        if diagonals {
            push(1, -1, Orientation::D1);
            push(1, 1, Orientation::D2);
        }
    }
    edges.sort_by_key(|e| (e.i, e.j));
    edges.dedup_by_key(|e| (e.i, e.j));

    let graph = LatticeGraph {
        coords: coords.to_vec(),
        edges,
    };
    let comps = components(graph.n_sites(), &graph.edge_pairs());
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    Ok(graph)
}

/// Connected components as sorted site lists.
pub fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(n);
    for &(i, j) in edges {
        uf.unite(i, j);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        groups.entry(uf.root(v)).or_default().push(v);
    }
    groups.into_values().collect()
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn root(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if already in the same component.
    fn unite(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.root(x), self.root(y));
        if rx == ry {
            return false;
        }
        if self.rank[rx] < self.rank[ry] {
            self.parent[rx] = ry;
        } else {
            self.parent[ry] = rx;
            if self.rank[rx] == self.rank[ry] {
                self.rank[rx] += 1;
            }
        }
        true
    }
}

/// A spanning tree of a parent graph: N-1 edges, connected, acyclic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanningTree {
    n: usize,
    /// Normalized (i < j), sorted: the canonical form used for dedup.
    edges: Vec<(usize, usize)>,
}

impl SpanningTree {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> =
            edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        edges.sort_unstable();
        edges.dedup();
        if edges.len() + 1 != n {
            return Err(Error::Validation(format!(
                "a spanning tree over {n} nodes needs {} edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        let mut uf = UnionFind::new(n);
        for &(i, j) in &edges {
            if i >= n || j >= n || !uf.unite(i, j) {
                return Err(Error::Validation("edge set contains a cycle".into()));
            }
        }
        Ok(Self { n, edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// The unique simple path from i to j as an ordered edge list; empty
    /// when i == j.
    pub fn path(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        if i == j {
            return Vec::new();
        }
        let adj = self.adjacency();
        let mut prev = vec![usize::MAX; self.n];
        let mut stack = vec![i];
        prev[i] = i;
        while let Some(v) = stack.pop() {
            if v == j {
                break;
            }
            for &w in &adj[v] {
                if prev[w] == usize::MAX {
                    prev[w] = v;
                    stack.push(w);
                }
            }
        }
        let mut path = Vec::new();
        let mut v = j;
        while v != i {
            path.push((prev[v], v));
            v = prev[v];
        }
        path.reverse();
        path
    }

    /// Edges ordered root-outward as (parent, child), for tree traversals.
    pub fn traversal_from(&self, root: usize) -> Vec<(usize, usize)> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut order = Vec::with_capacity(self.n.saturating_sub(1));
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push((v, w));
                    queue.push_back(w);
                }
            }
        }
        order
    }
}

/// Per-edge variogram parameters on a graph's edge set; keys normalized
/// to (min, max).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariogramEdgeMap {
    map: BTreeMap<(usize, usize), f64>,
}

impl VariogramEdgeMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = ((usize, usize), f64)>) -> Result<Self> {
        let mut m = Self::new();
        for ((i, j), g) in pairs {
            m.insert(i, j, g)?;
        }
        Ok(m)
    }

    /// Constant value on every listed edge.
    pub fn constant(edges: &[(usize, usize)], gamma: f64) -> Result<Self> {
        Self::from_pairs(edges.iter().map(|&e| (e, gamma)))
    }

    pub fn insert(&mut self, i: usize, j: usize, gamma: f64) -> Result<()> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::ParamDomain(format!(
                "edge variogram values must be positive and finite, got {gamma} on ({i},{j})"
            )));
        }
        self.map.insert((i.min(j), i.max(j)), gamma);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.map.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &f64)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Scale every edge value, e.g. by the bias-correction factor.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(&k, &v)| (k, v * factor))
                .collect(),
        }
    }
}

/// Path-sum variogram between two tree nodes: the additive tree metric.
pub fn tree_gamma(
    tree: &SpanningTree,
    gammas: &VariogramEdgeMap,
    i: usize,
    j: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (a, b) in tree.path(i, j) {
        total += gammas.get(a, b).ok_or_else(|| {
            Error::Config(format!("no variogram value on tree edge ({a},{b})"))
        })?;
    }
    Ok(total)
}

/// Symmetric nonnegative edge weights defining the spanning-tree prior;
/// entries are zero off the parent graph's edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightMatrix {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl EdgeWeightMatrix {
    pub fn new(n: usize, edges: &[(usize, usize)], weights: Vec<f64>) -> Result<Self> {
        if edges.len() != weights.len() {
            return Err(Error::Validation(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::ParamDomain(
                "edge weights must be nonnegative and finite".into(),
            ));
        }
        let edges: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        if edges.iter().any(|&(i, j)| i == j || j >= n) {
            return Err(Error::Validation("edge endpoints out of range".into()));
        }
        Ok(Self { n, edges, weights })
    }

    /// Uniform weights normalized to unit upper-triangular Euclidean norm.
    pub fn uniform_normalized(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let w = 1.0 / (edges.len() as f64).sqrt();
        Self::new(n, edges, vec![w; edges.len()])
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_of(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.edges
            .iter()
            .position(|&e| e == key)
            .map(|k| self.weights[k])
    }

    /// Euclidean norm of the upper-triangular part.
    pub fn upper_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Product of weights over a tree's edges, in log space.
    pub fn log_tree_weight(&self, tree: &SpanningTree) -> Result<f64> {
        let mut total = 0.0;
        for &(i, j) in tree.edges() {
            let w = self.weight_of(i, j).ok_or_else(|| {
                Error::Config(format!("tree edge ({i},{j}) is off the weight support"))
            })?;
            if w <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += w.ln();
        }
        Ok(total)
    }
}

/// Log-determinant of the Laplacian minor obtained by deleting row/column
/// `anchor`, computed from per-edge weights via Cholesky (sum of log
/// pivots, so it stays finite where the plain determinant under/overflows).
pub fn weighted_minor_logdet(
    n: usize,
    edges: &[(usize, usize)],
    weights: &[f64],
    anchor: usize,
) -> Result<f64> {
    debug_assert!(anchor < n && edges.len() == weights.len());
    if n == 1 {
        return Ok(0.0); // empty minor, det 1
    }
    let m = n - 1;
    let map = |v: usize| -> Option<usize> {
        use std::cmp::Ordering::*;
        match v.cmp(&anchor) {
            Less => Some(v),
            Equal => None,
            Greater => Some(v - 1),
        }
    };
    let mut q = DMatrix::<f64>::zeros(m, m);
    for (&(i, j), &w) in edges.iter().zip(weights) {
        let (mi, mj) = (map(i), map(j));
        if let Some(mi) = mi {
            q[(mi, mi)] += w;
        }
        if let Some(mj) = mj {
            q[(mj, mj)] += w;
        }
        if let (Some(mi), Some(mj)) = (mi, mj) {
            q[(mi, mj)] -= w;
            q[(mj, mi)] -= w;
        }
    }
    cholesky_logdet(&q)
}

/// Log-determinant of a symmetric positive-definite matrix; a singularity
/// error if the factorization fails or a pivot collapses.
pub(crate) fn cholesky_logdet(q: &DMatrix<f64>) -> Result<f64> {
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Laplacian minor is not positive definite".into()))?;
    let mut logdet = 0.0;
    for d in chol.l().diagonal().iter() {
        if !(*d > 0.0) || !d.is_finite() {
            return Err(Error::Singular("zero pivot in Cholesky".into()));
        }
        logdet += d.ln();
    }
    Ok(2.0 * logdet)
}

/// det Q(beta): the weighted spanning-tree sum by the matrix-tree theorem.
pub fn laplacian_minor_det(beta: &EdgeWeightMatrix) -> Result<f64> {
    laplacian_minor_logdet(beta).map(f64::exp)
}

/// log det Q(beta), deleting the last row/column (the choice of deleted
/// node does not change the determinant).
pub fn laplacian_minor_logdet(beta: &EdgeWeightMatrix) -> Result<f64> {
    weighted_minor_logdet(beta.n, &beta.edges, &beta.weights, beta.n - 1)
}

/// Same determinant with an explicit deleted node, for invariance checks.
pub fn laplacian_minor_logdet_anchored(beta: &EdgeWeightMatrix, anchor: usize) -> Result<f64> {
    weighted_minor_logdet(beta.n, &beta.edges, &beta.weights, anchor)
}

/// Maximum node count accepted by [`enumerate_spanning_trees`].
pub const ENUMERATION_NODE_LIMIT: usize = 8;

/// Exhaustively enumerate all spanning trees of a small graph.
pub fn enumerate_spanning_trees(n: usize, edges: &[(usize, usize)]) -> Result<Vec<SpanningTree>> {
    if n > ENUMERATION_NODE_LIMIT {
        return Err(Error::GraphTooLarge {
            have: n,
            limit: ENUMERATION_NODE_LIMIT,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let edges: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    let k = n - 1;
    let mut out = Vec::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    // depth-first over edge combinations, pruning cycles early
    fn recurse(
        start: usize,
        k: usize,
        n: usize,
        edges: &[(usize, usize)],
        chosen: &mut Vec<usize>,
        out: &mut Vec<SpanningTree>,
    ) {
        if chosen.len() == k {
            let es: Vec<(usize, usize)> = chosen.iter().map(|&c| edges[c]).collect();
            if let Ok(tree) = SpanningTree::new(n, es) {
                out.push(tree);
            }
            return;
        }
        let remaining = k - chosen.len();
        for e in start..edges.len() {
            if edges.len() - e < remaining {
                break;
            }
            chosen.push(e);
            recurse(e + 1, k, n, edges, chosen, out);
            chosen.pop();
        }
    }
    recurse(0, k, n, &edges, &mut chosen, &mut out);
    out.sort();
    out.dedup();
    Ok(out)
}

/// The spanning tree with the largest edge-weight product: the mode of the
/// weight-proportional tree prior over ALL spanning trees of the support.
/// Kruskal on descending weights; exact ties break on the lowest edge
/// index.
pub fn max_product_spanning_tree(beta: &EdgeWeightMatrix) -> Result<SpanningTree> {
    let n = beta.n_nodes();
    let mut order: Vec<usize> = (0..beta.edges().len()).collect();
    order.sort_by(|&a, &b| {
        beta.weights()[b]
            .partial_cmp(&beta.weights()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut uf = UnionFind::new(n);
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    for idx in order {
        let (i, j) = beta.edges()[idx];
        if uf.unite(i, j) {
            chosen.push((i, j));
            if chosen.len() + 1 == n {
                break;
            }
        }
    }
    SpanningTree::new(n, chosen)
}

/// Rate parameters of the exponential edge-value draws, one per edge
/// orientation; larger rates make that orientation cheaper and thus more
/// likely to enter the minimum spanning tree. An infinite rate degenerates
/// to a constant zero draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationRates {
    pub horizontal: f64,
    pub vertical: f64,
    pub diag_nw_se: f64,
    pub diag_sw_ne: f64,
}

impl OrientationRates {
    pub fn uniform(rate: f64) -> Self {
        Self {
            horizontal: rate,
            vertical: rate,
            diag_nw_se: rate,
            diag_sw_ne: rate,
        }
    }

    fn rate_for(&self, o: Orientation) -> f64 {
        match o {
            Orientation::H => self.horizontal,
            Orientation::V => self.vertical,
            Orientation::D1 => self.diag_nw_se,
            Orientation::D2 => self.diag_sw_ne,
        }
    }

    fn validate(&self) -> Result<()> {
        for r in [
            self.horizontal,
            self.vertical,
            self.diag_nw_se,
            self.diag_sw_ne,
        ] {
            if !(r > 0.0) {
                return Err(Error::ParamDomain(format!(
                    "orientation rates must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Draw one random spanning tree: exponential edge values with
/// orientation-specific rates, then the minimum spanning tree under their
/// sum (Kruskal); exact ties break on the lowest edge index.
pub fn sample_random_tree(
    graph: &LatticeGraph,
    rates: &OrientationRates,
    seed: u64,
) -> Result<SpanningTree> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    sample_random_tree_with(graph, rates, &mut rng)
}

pub(crate) fn sample_random_tree_with(
    graph: &LatticeGraph,
    rates: &OrientationRates,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<SpanningTree> {
    rates.validate()?;
    let n = graph.n_sites();
    let mut weighted: Vec<(f64, usize)> = graph
        .edges
        .iter()
        .enumerate()
        .map(|(idx, e)| {
            let rate = rates.rate_for(e.orientation);
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let omega = if rate.is_infinite() { 0.0 } else { -u.ln() / rate };
            (omega, idx)
        })
        .collect();
    weighted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut uf = UnionFind::new(n);
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    for &(_, idx) in &weighted {
        let e = graph.edges[idx];
        if uf.unite(e.i, e.j) {
            chosen.push((e.i, e.j));
            if chosen.len() + 1 == n {
                break;
            }
        }
    }
    SpanningTree::new(n, chosen)
}

/// A deduplicated collection of sampled spanning trees.
#[derive(Debug, Clone)]
pub struct TreeEnsemble {
    pub trees: Vec<SpanningTree>,
    /// Number of raw draws performed (before deduplication).
    pub raw_draws: usize,
}

impl TreeEnsemble {
    pub fn singleton(tree: SpanningTree) -> Self {
        Self {
            trees: vec![tree],
            raw_draws: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

/// Draw `m_prime` random trees and keep the distinct ones (dedup key: the
/// canonical sorted edge set).
pub fn sample_tree_ensemble(
    graph: &LatticeGraph,
    rates: &OrientationRates,
    m_prime: usize,
    seed: u64,
) -> Result<TreeEnsemble> {
    if m_prime == 0 {
        return Err(Error::ParamDomain("ensemble size must be >= 1".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut trees = Vec::new();
    for _ in 0..m_prime {
        let tree = sample_random_tree_with(graph, rates, &mut rng)?;
        if seen.insert(tree.edges().to_vec()) {
            trees.push(tree);
        }
    }
    Ok(TreeEnsemble {
        trees,
        raw_draws: m_prime,
    })
}

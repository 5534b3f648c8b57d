//! Spatial clustering of sites: Lloyd's algorithm with k-means++ seeding
//! on (lon, lat) coordinates.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    /// Cluster id per site, 0..k.
    pub assignment: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    /// Within-cluster sum of squared coordinate distances.
    pub wcss: f64,
    pub centroids: Vec<(f64, f64)>,
}

impl ClusterAssignment {
    pub fn members_of(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(s, &c)| (c == cluster).then_some(s))
            .collect()
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

/// Deterministic k-means with k-means++ initialization. An empty cluster
/// at convergence triggers a bounded number of reseeded retries.
pub fn kmeans_clusters(coords: &[(f64, f64)], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 || k > coords.len() {
        return Err(Error::Config(format!(
            "cluster count {k} out of range for {} sites",
            coords.len()
        )));
    }
    for retry in 0..5 {
        let attempt_seed = seed.wrapping_add(retry);
        if let Some(result) = kmeans_once(coords, k, attempt_seed)? {
            return Ok(ClusterAssignment { seed, ..result });
        }
    }
    Err(Error::Optimization {
        message: format!("k-means produced an empty cluster after 5 reseeds (k = {k})"),
        last_iterate: vec![],
    })
}

fn kmeans_once(
    coords: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<Option<ClusterAssignment>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = coords.len();

    // k-means++ seeding
    let mut centroids: Vec<(f64, f64)> = Vec::with_capacity(k);
    centroids.push(coords[rng.gen_range(0..n)]);
    let mut d2: Vec<f64> = coords.iter().map(|&c| dist2(c, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining mass at chosen points (duplicate coordinates)
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(coords[next]);
        for (i, &c) in coords.iter().enumerate() {
            d2[i] = d2[i].min(dist2(c, centroids[centroids.len() - 1]));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..200 {
        let mut changed = false;
        for (i, &c) in coords.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, &cen) in centroids.iter().enumerate() {
                let d = dist2(c, cen);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, &c) in coords.iter().enumerate() {
            let s = &mut sums[assignment[i]];
            s.0 += c.0;
            s.1 += c.1;
            s.2 += 1;
        }
        for (j, &(sx, sy, count)) in sums.iter().enumerate() {
            if count > 0 {
                centroids[j] = (sx / count as f64, sy / count as f64);
            }
        }
        if !changed {
            break;
        }
    }

    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    if counts.contains(&0) {
        return Ok(None);
    }
    let wcss = coords
        .iter()
        .enumerate()
        .map(|(i, &c)| dist2(c, centroids[assignment[i]]))
        .sum();
    Ok(Some(ClusterAssignment {
        assignment,
        k,
        seed,
        wcss,
        centroids,
    }))
}

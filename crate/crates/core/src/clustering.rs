//! DBSCAN clustering, cluster centroids, and the centroid-distance machinery
//! used to score source samples for the replay memory.
//!
//! Point sets stay small (a few hundred embeddings), so neighborhood queries
//! run over the full O(N^2) distance table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_euclidean, Matrix};
use crate::seeding;

/// DBSCAN settings. When `epsilon` is `None` the radius comes from the
/// k-distance heuristic: the median distance to each point's
/// `(min_points - 1)`-th nearest neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    pub epsilon: Option<f64>,
    pub min_points: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            epsilon: None,
            min_points: 5,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(Error::invalid_config("epsilon must be positive"));
            }
        }
        if self.min_points == 0 {
            return Err(Error::invalid_config("min_points must be at least 1"));
        }
        Ok(())
    }
}

/// Cluster assignments plus centroids. `None` marks noise. After the
/// all-noise fallback there is always at least one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<Option<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub cluster_count: usize,
}

/// Median distance to the `(min_points - 1)`-th nearest neighbor, floored at
/// a tiny positive value so coincident point sets still cluster.
pub fn auto_epsilon(points: &[Vec<f64>], min_points: usize) -> f64 {
    let n = points.len();
    if n <= 1 {
        return 1e-12;
    }
    let k = min_points.saturating_sub(1).max(1);
    let mut kth: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| squared_euclidean(&points[i], &points[j]).unwrap().sqrt())
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = k.min(dists.len()) - 1;
        kth.push(dists[idx]);
    }
    kth.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if kth.len() % 2 == 1 {
        kth[kth.len() / 2]
    } else {
        0.5 * (kth[kth.len() / 2 - 1] + kth[kth.len() / 2])
    };
    median.max(1e-12)
}

/// Standard DBSCAN over Euclidean distance.
///
/// Core points have at least `min_points` neighbors within `epsilon`
/// (inclusive, self-counting). Border points join the first core cluster that
/// reaches them in index order; if everything ends up noise, the whole set
/// collapses into a single cluster so downstream centroid math stays defined.
pub fn dbscan(points: &[Vec<f64>], cfg: &DbscanConfig) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::Empty { what: "points" });
    }
    cfg.validate()?;
    let n = points.len();
    let eps = cfg.epsilon.unwrap_or_else(|| auto_epsilon(points, cfg.min_points));
    let eps2 = eps * eps;

    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| squared_euclidean(&points[i], &points[j]).unwrap() <= eps2)
            .collect()
    };

    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut cluster_count = 0;

    for p in 0..n {
        if label[p] != UNVISITED {
            continue;
        }
        let nb = neighbors(p);
        if nb.len() < cfg.min_points {
            label[p] = NOISE;
            continue;
        }
        let cid = cluster_count;
        cluster_count += 1;
        label[p] = cid;
        let mut queue: std::collections::VecDeque<usize> = nb.into_iter().collect();
        while let Some(q) = queue.pop_front() {
            if label[q] == NOISE {
                label[q] = cid; // border point
                continue;
            }
            if label[q] != UNVISITED {
                continue;
            }
            label[q] = cid;
            let nq = neighbors(q);
            if nq.len() >= cfg.min_points {
                queue.extend(nq);
            }
        }
    }

    let assignments: Vec<Option<usize>> = if cluster_count == 0 {
        cluster_count = 1;
        vec![Some(0); n]
    } else {
        label
            .into_iter()
            .map(|l| if l == NOISE { None } else { Some(l) })
            .collect()
    };

    let centroids = centroids_from_assignments(points, &assignments, cluster_count);
    Ok(Clustering {
        assignments,
        centroids,
        cluster_count,
    })
}

fn centroids_from_assignments(
    points: &[Vec<f64>],
    assignments: &[Option<usize>],
    cluster_count: usize,
) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; cluster_count];
    let mut counts = vec![0usize; cluster_count];
    for (p, a) in points.iter().zip(assignments) {
        if let Some(c) = a {
            counts[*c] += 1;
            for (s, v) in sums[*c].iter_mut().zip(p) {
                *s += v;
            }
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            for s in sum.iter_mut() {
                *s /= count as f64;
            }
        }
    }
    sums
}

/// Coordinate-wise mean of each cluster's members; noise points excluded.
pub fn centroids(points: &[Vec<f64>], clustering: &Clustering) -> Vec<Vec<f64>> {
    centroids_from_assignments(points, &clustering.assignments, clustering.cluster_count)
}

/// Squared Euclidean distances between every point and every centroid,
/// entry `(j, i)` holding the distance from point `i` to centroid `j`.
pub fn centroid_distance_matrix(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Result<Matrix> {
    if points.is_empty() {
        return Err(Error::Empty { what: "points" });
    }
    if centroids.is_empty() {
        return Err(Error::Empty { what: "centroids" });
    }
    let mut m = Matrix::zeros(centroids.len(), points.len());
    for (j, c) in centroids.iter().enumerate() {
        for (i, p) in points.iter().enumerate() {
            m.set(j, i, squared_euclidean(p, c)?);
        }
    }
    Ok(m)
}

/// Column-wise minimum: each point's distance to its nearest centroid.
pub fn min_over_clusters(h: &Matrix) -> Vec<f64> {
    (0..h.cols())
        .map(|i| {
            (0..h.rows())
                .map(|j| h.get(j, i))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Plain Lloyd k-means with seeded initialization (first `k` points of a
/// seeded permutation). Empty clusters keep their previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::Empty { what: "points" });
    }
    let k = k.max(1).min(points.len());
    let order = seeding::shuffled_indices(points.len(), seed);
    let mut centroids: Vec<Vec<f64>> = order[..k].iter().map(|&i| points[i].clone()).collect();
    let mut assignments = vec![Some(0usize); points.len()];
    for _ in 0..iterations {
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_euclidean(p, centroid)?;
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = Some(best);
            counts[best] += 1;
        }
        let fresh = centroids_from_assignments(points, &assignments, k);
        for (c, (new_c, count)) in fresh.into_iter().zip(&counts).enumerate() {
            if *count > 0 {
                centroids[c] = new_c;
            }
        }
    }
    Ok(Clustering {
        assignments,
        centroids: centroids.clone(),
        cluster_count: k,
    })
}

use rand::Rng;

use super::ClusterResult;
use crate::linalg::{sq_euclidean, Matrix};
use crate::{Error, Result};

const MAX_ITER: usize = 100;

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_euclidean(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_euclidean(points.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // Remaining points all coincide with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_euclidean(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding on Euclidean embeddings.
///
/// Empty clusters are re-seeded from the point farthest from its centroid.
/// Stops when assignments are stable or after 100 iterations.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut impl Rng) -> Result<ClusterResult> {
    kmeans_fit(points, k, rng).map(|(r, _)| r)
}

/// Like [`kmeans`], also returning the centroid of every output cluster.
pub fn kmeans_fit(
    points: &Matrix,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(ClusterResult, Vec<Vec<f64>>)> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if k > n {
        return Err(Error::config("k", format!("{k} exceeds the number of points {n}")));
    }
    let dim = points.cols();
    let mut centroids = plus_plus_seeds(points, k, rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];

    for _ in 0..MAX_ITER {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            dists[i] = d;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i] && counts[assign[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                taken[i] = true;
                counts[assign[i]] -= 1;
                assign[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
                changed = true;
            }
        }

        for (c, centroid) in centroids.iter_mut().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            centroid.iter_mut().for_each(|v| *v = 0.0);
        }
        for i in 0..n {
            let c = &mut centroids[assign[i]];
            for (v, x) in c.iter_mut().zip(points.row(i)) {
                *v += x;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if counts[c] > 0 {
                centroid.iter_mut().for_each(|v| *v /= counts[c] as f64);
            }
        }
        debug_assert!(centroids.iter().all(|c| c.len() == dim));

        if !changed {
            break;
        }
    }

    let raw: Vec<i64> = assign.iter().map(|&a| a as i64).collect();
    let result = ClusterResult::from_raw_labels(&raw);
    let mut ordered = vec![Vec::new(); result.num_clusters];
    for (i, &l) in result.labels.iter().enumerate() {
        if ordered[l as usize].is_empty() {
            ordered[l as usize] = centroids[assign[i]].clone();
        }
    }
    Ok((result, ordered))
}

use std::collections::VecDeque;

use super::ClusterResult;
use crate::metricspace::DistanceMatrix;
use crate::{Error, Result};

/// DBSCAN over a precomputed distance matrix.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`. Clusters are grown from cores in ascending index order, so a border
/// point reachable from several clusters joins the one with the smallest core
/// index.
pub fn dbscan(dist: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<ClusterResult> {
    if !(eps > 0.0) {
        return Err(Error::config("eps", "must be > 0"));
    }
    if min_pts == 0 {
        return Err(Error::config("min_pts", "must be >= 1"));
    }
    let n = dist.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist.get(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![-1i64; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start] >= 0 || !core[start] {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q] < 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    Ok(ClusterResult::from_raw_labels(&labels))
}

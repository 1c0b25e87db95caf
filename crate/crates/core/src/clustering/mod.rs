//! Clustering backends and cluster-quality scoring.
//!
//! Every backend returns a [`ClusterResult`] with labels in `[0, K)` ordered by
//! the smallest member index, and [`OUTLIER`] for unassigned samples.

mod dbi;
mod dbscan;
mod infomap;
mod kmeans;

pub use dbi::davies_bouldin;
pub use dbscan::dbscan;
pub use infomap::{infomap, map_equation_codelength, InfomapOptions};
pub use kmeans::{kmeans, kmeans_fit};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

pub const OUTLIER: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<i32>,
    pub num_clusters: usize,
    /// `None` when fewer than two clusters exist (quality unknown).
    pub dbi: Option<f64>,
}

impl ClusterResult {
    /// Builds a result from arbitrary labels (negative = outlier), renumbering
    /// clusters contiguously by first appearance.
    pub fn from_raw_labels(raw: &[i64]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                if l < 0 {
                    OUTLIER
                } else {
                    let next = map.len() as i32;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        Self {
            labels,
            num_clusters: map.len(),
            dbi: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_outliers(&self) -> usize {
        self.labels.iter().filter(|&&l| l == OUTLIER).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &l in &self.labels {
            if l != OUTLIER {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    /// Computes and stores the Davies-Bouldin index on `embeddings`.
    pub fn score(&mut self, embeddings: &Matrix) -> Result<()> {
        self.dbi = match davies_bouldin(embeddings, &self.labels) {
            Ok(v) => Some(v),
            Err(Error::TooFewClusters { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(())
    }
}

/// Samples that survived clustering, with their contiguous pseudo labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSet {
    /// Positions into the full dataset.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Members of each class, in ascending dataset position.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (&i, &l) in self.indices.iter().zip(&self.labels) {
            out[l].push(i);
        }
        out
    }
}

/// Drops outliers and renumbers the remaining labels to `[0, K)`.
pub fn pseudo_labels(result: &ClusterResult) -> Result<TrainingSet> {
    let raw: Vec<i64> = result.labels.iter().map(|&l| l as i64).collect();
    let relabeled = ClusterResult::from_raw_labels(&raw);
    if relabeled.num_clusters == 0 {
        return Err(Error::NoClusters);
    }
    let (indices, labels) = relabeled
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != OUTLIER)
        .map(|(i, &l)| (i, l as usize))
        .unzip();
    Ok(TrainingSet {
        indices,
        labels,
        num_classes: relabeled.num_clusters,
    })
}

/// Canonical form for permutation-invariant comparison: labels renumbered by
/// first appearance, outliers kept.
pub fn canonical_labels(labels: &[i32]) -> Vec<i32> {
    let raw: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    ClusterResult::from_raw_labels(&raw).labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_labels_drop_outliers() {
        let r = ClusterResult::from_raw_labels(&[0, 0, -1, 1]);
        let t = pseudo_labels(&r).unwrap();
        assert_eq!(t.indices, vec![0, 1, 3]);
        assert_eq!(t.labels, vec![0, 0, 1]);
        assert_eq!(t.num_classes, 2);
    }

    #[test]
    fn all_outliers_is_flagged() {
        let r = ClusterResult::from_raw_labels(&[-1, -1, -1]);
        assert!(matches!(pseudo_labels(&r), Err(Error::NoClusters)));
    }

    #[test]
    fn relabeling_is_contiguous() {
        let r = ClusterResult::from_raw_labels(&[7, -1, 3, 7, 9, 3]);
        assert_eq!(r.labels, vec![0, -1, 1, 0, 2, 1]);
        assert_eq!(r.num_clusters, 3);
        let t = pseudo_labels(&r).unwrap();
        assert_eq!(t.len(), r.len() - r.num_outliers());
        assert_eq!(canonical_labels(&[2, 2, 0, -1]), vec![0, 0, 1, -1]);
    }
}

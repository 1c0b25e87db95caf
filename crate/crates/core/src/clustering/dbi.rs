use super::OUTLIER;
use crate::linalg::{euclidean, Matrix};
use crate::{Error, Result};

/// Davies-Bouldin index in Euclidean embedding space, outliers excluded.
///
/// `DBI = (1/K) sum_i max_{j != i} (s_i + s_j) / d_ij` with `s_i` the mean
/// member-to-centroid distance and `d_ij` the centroid distance. Two clusters
/// with coincident centroids contribute `+inf` unless both have zero scatter.
pub fn davies_bouldin(embeddings: &Matrix, labels: &[i32]) -> Result<f64> {
    if labels.len() != embeddings.rows() {
        return Err(Error::shape(embeddings.rows(), labels.len()));
    }
    let k = labels
        .iter()
        .filter(|&&l| l != OUTLIER)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0);
    let dim = embeddings.cols();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        if l == OUTLIER {
            continue;
        }
        counts[l as usize] += 1;
        for (c, x) in centroids[l as usize].iter_mut().zip(embeddings.row(i)) {
            *c += x;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::TooFewClusters {
            found: present.len(),
        });
    }
    for &c in &present {
        centroids[c].iter_mut().for_each(|v| *v /= counts[c] as f64);
    }
    let mut scatter = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        if l != OUTLIER {
            scatter[l as usize] += euclidean(embeddings.row(i), &centroids[l as usize]);
        }
    }
    for &c in &present {
        scatter[c] /= counts[c] as f64;
    }

    let mut total = 0.0;
    for &a in &present {
        let mut worst = 0.0f64;
        for &b in &present {
            if a == b {
                continue;
            }
            let num = scatter[a] + scatter[b];
            let den = euclidean(&centroids[a], &centroids[b]);
            let ratio = if den > 0.0 {
                num / den
            } else if num > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / present.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Matrix {
        Matrix::from_vec(points.len(), 1, points.to_vec())
    }

    #[test]
    fn singletons_have_zero_index() {
        let v = davies_bouldin(&line(&[0.0, 3.0]), &[0, 1]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn duplicate_members_have_zero_index() {
        let v = davies_bouldin(&line(&[0.0, 0.0, 10.0, 10.0]), &[0, 0, 1, 1]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn hand_arithmetic() {
        let v = davies_bouldin(&line(&[0.0, 1.0, 4.0, 5.0]), &[0, 0, 1, 1]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn outliers_are_ignored_and_single_cluster_is_sentinel() {
        let v = davies_bouldin(&line(&[0.0, 1.0, 100.0, 4.0, 5.0]), &[0, 0, -1, 1, 1]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!(matches!(
            davies_bouldin(&line(&[0.0, 1.0, 2.0]), &[0, 0, -1]),
            Err(Error::TooFewClusters { found: 1 })
        ));
    }
}

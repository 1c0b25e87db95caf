//! Cluster-level memory banks.

use crate::clustering::OUTLIER;
use crate::linalg::{normalize, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    reps: Matrix,
    beta: f64,
    normalize: bool,
}

impl MemoryBank {
    pub fn from_reps(reps: Matrix, beta: f64, normalize: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config("beta", "must lie in [0, 1)"));
        }
        Ok(Self {
            reps,
            beta,
            normalize,
        })
    }

    /// One representation per cluster: the mean of its members' embeddings,
    /// renormalized. Outliers are ignored.
    pub fn init_from_clusters(
        embeddings: &Matrix,
        labels: &[i32],
        num_clusters: usize,
        beta: f64,
        normalize_reps: bool,
    ) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::shape(embeddings.rows(), labels.len()));
        }
        if num_clusters == 0 {
            return Err(Error::NoClusters);
        }
        let mut reps = Matrix::zeros(num_clusters, embeddings.cols());
        let mut counts = vec![0usize; num_clusters];
        for (i, &l) in labels.iter().enumerate() {
            if l == OUTLIER {
                continue;
            }
            let k = l as usize;
            if k >= num_clusters {
                return Err(Error::OutOfRange {
                    what: "cluster id",
                    index: k,
                    size: num_clusters,
                });
            }
            counts[k] += 1;
            for (r, e) in reps.row_mut(k).iter_mut().zip(embeddings.row(i)) {
                *r += e;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            assert!(c > 0, "cluster {k} has no members");
            let row = reps.row_mut(k);
            row.iter_mut().for_each(|v| *v /= c as f64);
            if normalize_reps {
                normalize(row);
            }
        }
        Self::from_reps(reps, beta, normalize_reps)
    }

    pub fn len(&self) -> usize {
        self.reps.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.rows() == 0
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reps(&self) -> &Matrix {
        &self.reps
    }

    pub fn rep(&self, k: usize) -> &[f64] {
        self.reps.row(k)
    }

    /// `c_k <- beta * c_k + (1 - beta) * q`, renormalized when enabled.
    pub fn momentum_update(&mut self, k: usize, q: &[f64]) -> Result<()> {
        if k >= self.len() {
            return Err(Error::OutOfRange {
                what: "cluster id",
                index: k,
                size: self.len(),
            });
        }
        if q.len() != self.reps.cols() {
            return Err(Error::shape(self.reps.cols(), q.len()));
        }
        let beta = self.beta;
        let row = self.reps.row_mut(k);
        for (c, v) in row.iter_mut().zip(q) {
            *c = beta * *c + (1.0 - beta) * v;
        }
        if self.normalize {
            normalize(row);
        }
        Ok(())
    }

    /// Sequential per-sample updates in batch order.
    pub fn update_batch(&mut self, labels: &[usize], features: &Matrix) -> Result<()> {
        if labels.len() != features.rows() {
            return Err(Error::shape(features.rows(), labels.len()));
        }
        for (i, &k) in labels.iter().enumerate() {
            self.momentum_update(k, features.row(i))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use proptest::prelude::*;

    #[test]
    fn single_member_rep_is_member() {
        let e = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0]]);
        let bank = MemoryBank::init_from_clusters(&e, &[0, 1], 2, 0.1, true).unwrap();
        assert_eq!(bank.rep(0), &[0.6, 0.8]);
        assert_eq!(bank.rep(1), &[1.0, 0.0]);
    }

    #[test]
    fn mean_then_normalize() {
        let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
        let bank = MemoryBank::init_from_clusters(&e, &[0, 0, OUTLIER], 1, 0.1, true).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((bank.rep(0)[0] - s).abs() < 1e-15 && (bank.rep(0)[1] - s).abs() < 1e-15);
    }

    #[test]
    fn multiplicity_weights_the_mean() {
        let e = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let dup = MemoryBank::init_from_clusters(&e, &[0, 0, 0], 1, 0.1, false).unwrap();
        assert!((dup.rep(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((dup.rep(0)[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn momentum_arithmetic() {
        let reps = Matrix::from_rows(&[[1.0, 0.0]]);
        let mut raw = MemoryBank::from_reps(reps.clone(), 0.1, false).unwrap();
        raw.momentum_update(0, &[0.0, 1.0]).unwrap();
        assert!((raw.rep(0)[0] - 0.1).abs() < 1e-15 && (raw.rep(0)[1] - 0.9).abs() < 1e-15);

        let mut same = MemoryBank::from_reps(reps.clone(), 0.1, true).unwrap();
        same.momentum_update(0, &[1.0, 0.0]).unwrap();
        assert_eq!(same.rep(0), &[1.0, 0.0]);

        let mut replace = MemoryBank::from_reps(reps, 0.0, true).unwrap();
        replace.momentum_update(0, &[0.0, 1.0]).unwrap();
        assert_eq!(replace.rep(0), &[0.0, 1.0]);

        assert!(matches!(
            replace.momentum_update(1, &[0.0, 1.0]),
            Err(Error::OutOfRange { index: 1, .. })
        ));
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        if normalize(&mut v) == 0.0 {
            v[0] = 1.0;
        }
        v
    }

    proptest! {
        #[test]
        fn updates_keep_norm_and_leave_others_untouched(
            reps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3..6),
            updates in prop::collection::vec((0usize..3, prop::collection::vec(-1.0f64..1.0, 4)), 1..10),
            beta in 0.0f64..0.99,
        ) {
            let reps: Vec<Vec<f64>> = reps.into_iter().map(unit).collect();
            let mut bank = MemoryBank::from_reps(Matrix::from_rows(&reps), beta, true).unwrap();
            let before = bank.clone();
            let touched: std::collections::BTreeSet<usize> = updates.iter().map(|u| u.0).collect();
            for (k, q) in updates {
                let q = unit(q);
                // Antipodal updates can cancel exactly; skip those.
                let c = bank.rep(k).to_vec();
                let mix: Vec<f64> = c.iter().zip(&q).map(|(a, b)| beta * a + (1.0 - beta) * b).collect();
                prop_assume!(norm(&mix) > 1e-6);
                bank.momentum_update(k, &q).unwrap();
            }
            for k in 0..bank.len() {
                prop_assert!((norm(bank.rep(k)) - 1.0).abs() < 1e-6);
                if !touched.contains(&k) {
                    prop_assert_eq!(bank.rep(k), before.rep(k));
                }
            }
        }

        #[test]
        fn high_beta_nearly_freezes(c in prop::collection::vec(-1.0f64..1.0, 3), q in prop::collection::vec(-1.0f64..1.0, 3), beta in 0.9f64..0.9999) {
            let c = unit(c);
            let q = unit(q);
            let mut bank = MemoryBank::from_reps(Matrix::from_rows(&[c.clone()]), beta, true).unwrap();
            bank.momentum_update(0, &q).unwrap();
            let moved = crate::linalg::euclidean(bank.rep(0), &c);
            prop_assert!(moved <= (1.0 - beta) * 2.0 + 1e-12, "{} > {}", moved, (1.0 - beta) * 2.0);
        }
    }
}

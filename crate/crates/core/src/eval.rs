//! Retrieval evaluation with the cross-camera protocol: gallery entries that
//! share both identity and camera with a query are removed from its ranking.

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::{Error, Result};

pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

/// Embeddings with the metadata needed to judge matches.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub features: &'a Matrix,
    pub identities: &'a [usize],
    pub cameras: &'a [usize],
}

impl LabeledSet<'_> {
    fn check(&self) -> Result<()> {
        let n = self.features.rows();
        if self.identities.len() != n || self.cameras.len() != n {
            return Err(Error::shape(
                n,
                format!("{} ids / {} cameras", self.identities.len(), self.cameras.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub map: f64,
    /// Top-1, top-5 and top-10 accuracy.
    pub cmc: [f64; 3],
    pub evaluated_queries: usize,
    /// Queries without any valid gallery match.
    pub skipped_queries: usize,
}

impl RetrievalResult {
    pub fn top1(&self) -> f64 {
        self.cmc[0]
    }
}

/// Per-query average precision and first-hit rank (0-based), or `None` when
/// the query has no valid match.
fn score_query(q: usize, query: &LabeledSet, gallery: &LabeledSet) -> Option<(f64, usize)> {
    let qid = query.identities[q];
    let qcam = query.cameras[q];
    let qf = query.features.row(q);
    let mut ranked: Vec<(f64, usize)> = (0..gallery.features.rows())
        .filter(|&g| !(gallery.identities[g] == qid && gallery.cameras[g] == qcam))
        .map(|g| (dot(qf, gallery.features.row(g)), g))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first = None;
    for (rank, &(_, g)) in ranked.iter().enumerate() {
        if gallery.identities[g] == qid {
            hits += 1;
            precision_sum += hits as f64 / (rank + 1) as f64;
            first.get_or_insert(rank);
        }
    }
    first.map(|f| (precision_sum / hits as f64, f))
}

/// mAP and CMC of `query` ranked against `gallery` by cosine similarity
/// (descending; ties broken by ascending gallery position).
pub fn evaluate(query: &LabeledSet, gallery: &LabeledSet) -> Result<RetrievalResult> {
    query.check()?;
    gallery.check()?;
    let mut ap_sum = 0.0;
    let mut cmc_hits = [0usize; 3];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for q in 0..query.features.rows() {
        match score_query(q, query, gallery) {
            Some((ap, first)) => {
                evaluated += 1;
                ap_sum += ap;
                for (hit, &k) in cmc_hits.iter_mut().zip(&CMC_RANKS) {
                    if first < k {
                        *hit += 1;
                    }
                }
            }
            None => skipped += 1,
        }
    }
    let denom = evaluated.max(1) as f64;
    Ok(RetrievalResult {
        map: ap_sum / denom,
        cmc: cmc_hits.map(|h| h as f64 / denom),
        evaluated_queries: evaluated,
        skipped_queries: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D "embeddings" on the unit circle so that ranking follows angle.
    fn at_angles(angles: &[f64]) -> Matrix {
        Matrix::from_rows(
            &angles
                .iter()
                .map(|a| vec![a.cos(), a.sin()])
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn perfect_single_match() {
        let qf = at_angles(&[0.0]);
        let gf = at_angles(&[0.1, 1.0, 2.0]);
        let r = evaluate(
            &LabeledSet {
                features: &qf,
                identities: &[7],
                cameras: &[0],
            },
            &LabeledSet {
                features: &gf,
                identities: &[7, 1, 2],
                cameras: &[1, 0, 0],
            },
        )
        .unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.cmc, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn precision_at_relevant_ranks() {
        let qf = at_angles(&[0.0]);
        let gf = at_angles(&[0.1, 0.2, 0.3, 0.4]);
        let r = evaluate(
            &LabeledSet {
                features: &qf,
                identities: &[7],
                cameras: &[0],
            },
            &LabeledSet {
                features: &gf,
                identities: &[7, 1, 7, 2],
                cameras: &[1, 1, 2, 2],
            },
        )
        .unwrap();
        assert!((r.map - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn first_hit_at_rank_six() {
        let qf = at_angles(&[0.0]);
        let angles: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let gf = at_angles(&angles);
        let mut ids = vec![0usize; 10];
        ids[5] = 7;
        let cams = vec![1usize; 10];
        let r = evaluate(
            &LabeledSet {
                features: &qf,
                identities: &[7],
                cameras: &[0],
            },
            &LabeledSet {
                features: &gf,
                identities: &ids,
                cameras: &cams,
            },
        )
        .unwrap();
        assert_eq!(r.cmc, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn same_camera_matches_are_excluded() {
        let qf = at_angles(&[0.0]);
        let gf = at_angles(&[0.0, 0.5]);
        let r = evaluate(
            &LabeledSet {
                features: &qf,
                identities: &[3],
                cameras: &[0],
            },
            &LabeledSet {
                features: &gf,
                identities: &[3, 3],
                cameras: &[0, 1],
            },
        )
        .unwrap();
        assert_eq!(r.map, 1.0);

        let only_same = evaluate(
            &LabeledSet {
                features: &qf,
                identities: &[3],
                cameras: &[0],
            },
            &LabeledSet {
                features: &gf,
                identities: &[3, 4],
                cameras: &[0, 1],
            },
        )
        .unwrap();
        assert_eq!(only_same.skipped_queries, 1);
        assert_eq!(only_same.evaluated_queries, 0);
    }
}

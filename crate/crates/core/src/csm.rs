//! Consistent sample mining.
//!
//! A batch sample is consistent when the memory representation most similar
//! to its mean-net embedding is the one named by its pseudo label. Mining only
//! runs while the better of the two clusterings has a Davies-Bouldin index
//! below the threshold.

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::memory::MemoryBank;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsmReport {
    pub consistent: usize,
    pub inconsistent: usize,
    /// Inconsistent samples whose pseudo label agrees with the ground truth.
    pub inconsistent_correct: usize,
    pub inconsistent_incorrect: usize,
}

impl CsmReport {
    pub fn total(&self) -> usize {
        self.consistent + self.inconsistent
    }

    pub fn merge(&mut self, other: &CsmReport) {
        self.consistent += other.consistent;
        self.inconsistent += other.inconsistent;
        self.inconsistent_correct += other.inconsistent_correct;
        self.inconsistent_incorrect += other.inconsistent_incorrect;
    }
}

/// Index of the most similar representation; ties go to the smallest id.
pub fn nearest_cluster(embedding: &[f64], bank: &MemoryBank) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..bank.len() {
        let s = dot(embedding, bank.rep(k));
        if s > best.1 {
            best = (k, s);
        }
    }
    best.0
}

/// Returns the batch positions that are consistent, and the counts.
///
/// `label_correct`, when given, flags whether each sample's pseudo label
/// matches its ground truth; it only feeds the report.
pub fn mine(
    embeddings: &Matrix,
    labels: &[usize],
    bank: &MemoryBank,
    label_correct: Option<&[bool]>,
) -> Result<(Vec<usize>, CsmReport)> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::shape(embeddings.rows(), labels.len()));
    }
    if let Some(c) = label_correct {
        if c.len() != labels.len() {
            return Err(Error::shape(labels.len(), c.len()));
        }
    }
    let mut kept = Vec::with_capacity(labels.len());
    let mut report = CsmReport::default();
    for (i, &label) in labels.iter().enumerate() {
        if label >= bank.len() {
            return Err(Error::OutOfRange {
                what: "cluster id",
                index: label,
                size: bank.len(),
            });
        }
        if nearest_cluster(embeddings.row(i), bank) == label {
            kept.push(i);
            report.consistent += 1;
        } else {
            report.inconsistent += 1;
            match label_correct.map(|c| c[i]) {
                Some(true) => report.inconsistent_correct += 1,
                Some(false) => report.inconsistent_incorrect += 1,
                None => {}
            }
        }
    }
    Ok((kept, report))
}

/// Open iff both indices are defined and the smaller is below `gamma`.
pub fn gate(dbi1: Option<f64>, dbi2: Option<f64>, gamma: f64) -> bool {
    match (dbi1, dbi2) {
        (Some(a), Some(b)) => a.min(b) < gamma,
        _ => false,
    }
}

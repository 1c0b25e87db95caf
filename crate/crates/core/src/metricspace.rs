//! Pairwise distances: cosine and k-reciprocal-encoding Jaccard.

use std::io::Write;

use rayon::prelude::*;

use crate::linalg::{dot, norm, Matrix};
use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-6;

/// Square symmetric distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = f(i, j);
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_unit_rows(embeddings: &Matrix) -> Result<()> {
    for (row, r) in embeddings.iter_rows().enumerate() {
        let nrm = norm(r);
        if (nrm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitNorm { row, norm: nrm });
        }
    }
    Ok(())
}

/// `d(i, j) = 1 - e_i . e_j` on unit-norm rows, clamped to `[0, 2]`.
pub fn cosine_distance_matrix(embeddings: &Matrix) -> Result<DistanceMatrix> {
    check_unit_rows(embeddings)?;
    let n = embeddings.rows();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (1.0 - dot(embeddings.row(i), embeddings.row(j))).clamp(0.0, 2.0);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// The first `k + 1` entries of each row's ranking by `(distance, index)`.
fn top_ranks(dist: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = dist.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row = dist.row(i);
            let mut idx: Vec<usize> = (0..n).collect();
            let cmp = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
            let take = (k + 1).min(n);
            if take < n {
                idx.select_nth_unstable_by(take - 1, cmp);
                idx.truncate(take);
            }
            idx.sort_unstable_by(cmp);
            idx
        })
        .collect()
}

/// Members of `i`'s top-`k` (itself included) that also rank `i` in theirs,
/// in `i`'s ranking order.
fn reciprocal(ranks: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    ranks[i][..k + 1]
        .iter()
        .copied()
        .filter(|&c| ranks[c][..k + 1].contains(&i))
        .collect()
}

/// Jaccard distance over k-reciprocal encodings.
///
/// For every sample, the k1-reciprocal set is expanded by the round(k1/2)
/// reciprocal sets of its members whenever at least two thirds of such a set
/// is already inside; members are weighted by `exp(-d_cos)` and normalized,
/// the encoding is averaged over the k2 nearest neighbors, and
/// `d_J = 1 - sum min / sum max` over the soft encodings. The output is
/// `(1 - lambda) * d_J + lambda * d_cos`.
pub fn k_reciprocal_jaccard(
    embeddings: &Matrix,
    k1: usize,
    k2: usize,
    lambda: f64,
) -> Result<DistanceMatrix> {
    let n = embeddings.rows();
    if k1 == 0 || k1 >= n {
        return Err(Error::config("k1", format!("must lie in [1, {n}) for {n} samples")));
    }
    if k2 == 0 || k2 > k1 {
        return Err(Error::config("k2", format!("must lie in [1, k1 = {k1}]")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("jaccard_lambda", "must lie in [0, 1]"));
    }
    let cos = cosine_distance_matrix(embeddings)?;
    let k_half = (k1 as f64 / 2.0).round_ties_even() as usize;
    let ranks = top_ranks(&cos, k1);
    let near: Vec<Vec<usize>> = (0..n).map(|i| reciprocal(&ranks, i, k1)).collect();
    let near_half: Vec<Vec<usize>> = (0..n).map(|i| reciprocal(&ranks, i, k_half)).collect();

    // Sparse encodings: (column, weight) sorted by column.
    let mut enc: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let base = &near[i];
            let mut members = base.clone();
            for &c in base {
                let cand = &near_half[c];
                let overlap = cand.iter().filter(|x| base.contains(x)).count();
                if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
                    members.extend_from_slice(cand);
                }
            }
            members.sort_unstable();
            members.dedup();
            let weights: Vec<f64> = members.iter().map(|&j| (-cos.get(i, j)).exp()).collect();
            let total: f64 = weights.iter().sum();
            members
                .into_iter()
                .zip(weights)
                .map(|(j, w)| (j, w / total))
                .collect()
        })
        .collect();

    if k2 != 1 {
        enc = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
                for &r in &ranks[i][..k2] {
                    for &(j, w) in &enc[r] {
                        *acc.entry(j).or_insert(0.0) += w;
                    }
                }
                acc.into_iter()
                    .map(|(j, w)| (j, w / k2 as f64))
                    .filter(|&(_, w)| w != 0.0)
                    .collect()
            })
            .collect();
    }

    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in enc.iter().enumerate() {
        for &(j, w) in row {
            inverted[j].push((i, w));
        }
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut shared = vec![0.0; n];
            for &(c, w) in &enc[i] {
                for &(r, v) in &inverted[c] {
                    shared[r] += w.min(v);
                }
            }
            shared
                .iter()
                .enumerate()
                .map(|(j, &s)| {
                    if j == i {
                        return 0.0;
                    }
                    let jac = (1.0 - s / (2.0 - s)).clamp(0.0, 1.0);
                    if lambda == 0.0 {
                        jac
                    } else {
                        (1.0 - lambda) * jac + lambda * cos.get(i, j)
                    }
                })
                .collect()
        })
        .collect();
    Ok(DistanceMatrix {
        n,
        data: rows.concat(),
    })
}

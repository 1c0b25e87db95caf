//! Brute-force reference implementations and instance generators shared by
//! the integration tests and the acceptance suite. Each oracle follows the
//! textbook definition directly and shares no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dcct::metricspace::DistanceMatrix;
use dcct::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// Unit rows with deliberate exact duplicates, to exercise tie handling.
pub fn unit_rows_with_duplicates(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    let distinct = random_unit_rows(rng, n.div_ceil(2).max(1), d);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| distinct.row(rng.random_range(0..distinct.rows())).to_vec())
        .collect();
    Matrix::from_rows(&rows)
}

pub fn random_distance_matrix(rng: &mut impl Rng, n: usize) -> DistanceMatrix {
    let mut upper = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            upper[i][j] = rng.random::<f64>();
        }
    }
    DistanceMatrix::from_fn(n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => upper[i][j],
        std::cmp::Ordering::Greater => upper[j][i],
        std::cmp::Ordering::Equal => 0.0,
    })
}

/// Points on a line quantized to a grid, so distance ties at `eps` occur.
pub fn random_line_instance(rng: &mut impl Rng, n: usize) -> DistanceMatrix {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64 * 0.05).collect();
    DistanceMatrix::from_fn(n, |i, j| (xs[i] - xs[j]).abs())
}

/// Relabels so that clusters are numbered by first appearance; -1 stays -1.
pub fn canonical(labels: &[i32]) -> Vec<i32> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i32;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

// ---------------------------------------------------------------- DBSCAN

/// Density reachability from first principles: core points, connected
/// components of the core graph, borders attached to the adjacent component
/// whose smallest core index is lowest.
pub fn dbscan_oracle(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Vec<i32> {
    let n = d.len();
    let nbr = |i: usize, j: usize| d.get(i, j) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| nbr(i, j)).count() >= min_pts).collect();

    // transitive closure over core-core links
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && nbr(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    // component representative = smallest core index reachable
    let rep: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| (0..n).find(|&j| reach[i][j]).unwrap_or(i)))
        .collect();
    let mut reps: Vec<usize> = rep.iter().flatten().copied().collect();
    reps.sort_unstable();
    reps.dedup();
    let label_of = |r: usize| reps.iter().position(|&x| x == r).unwrap() as i32;

    (0..n)
        .map(|i| {
            if let Some(r) = rep[i] {
                return label_of(r);
            }
            (0..n)
                .filter(|&j| core[j] && nbr(i, j))
                .map(|j| rep[j].unwrap())
                .min()
                .map_or(-1, label_of)
        })
        .collect()
}

// ---------------------------------------------------------------- map equation

fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Two-level map equation for the undirected graph with links `D < psi`
/// weighted `1 - D`, evaluated on `nodes` partitioned by `module`.
pub fn map_equation(d: &DistanceMatrix, psi: f64, nodes: &[usize], module: &[usize]) -> f64 {
    let w = |a: usize, b: usize| {
        let x = d.get(nodes[a], nodes[b]);
        if a != b && x < psi {
            1.0 - x
        } else {
            0.0
        }
    };
    let m = nodes.len();
    let total: f64 = (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).map(|(a, b)| w(a, b)).sum();
    let n_mod = module.iter().max().map_or(0, |x| x + 1);
    let mut p_node = vec![0.0; m];
    let mut p_mod = vec![0.0; n_mod];
    let mut q_mod = vec![0.0; n_mod];
    for a in 0..m {
        for b in 0..m {
            let f = w(a, b) / total;
            p_node[a] += f;
            p_mod[module[a]] += f;
            if module[a] != module[b] {
                q_mod[module[a]] += f;
            }
        }
    }
    let q: f64 = q_mod.iter().sum();
    plogp(q) - 2.0 * q_mod.iter().map(|&x| plogp(x)).sum::<f64>()
        - p_node.iter().map(|&x| plogp(x)).sum::<f64>()
        + q_mod.iter().zip(&p_mod).map(|(&a, &b)| plogp(a + b)).sum::<f64>()
}

/// Every set partition of `0..m` as a restricted growth string.
pub fn set_partitions(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, m: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        for v in 0..=max + 1 {
            prefix.push(v);
            rec(prefix, max.max(v), m, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m == 0 {
        out.push(Vec::new());
    } else {
        rec(&mut vec![0], 0, m, &mut out);
    }
    out
}

pub struct MapOptimum {
    /// Nodes with at least one link.
    pub nodes: Vec<usize>,
    pub best: f64,
    pub runner_up: f64,
    pub partition: Vec<usize>,
}

/// Exhaustive minimum of the map equation over all partitions of the linked
/// nodes.
pub fn map_equation_optimum(d: &DistanceMatrix, psi: f64) -> MapOptimum {
    let n = d.len();
    let nodes: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && d.get(i, j) < psi))
        .collect();
    let mut best = f64::INFINITY;
    let mut runner_up = f64::INFINITY;
    let mut partition = Vec::new();
    for p in set_partitions(nodes.len()) {
        let l = map_equation(d, psi, &nodes, &p);
        if l < best {
            runner_up = best;
            best = l;
            partition = p;
        } else if l < runner_up {
            runner_up = l;
        }
    }
    MapOptimum {
        nodes,
        best,
        runner_up,
        partition,
    }
}

// ---------------------------------------------------------------- DBI

pub fn dbi_oracle(x: &Matrix, labels: &[i32]) -> Option<f64> {
    let ids: BTreeSet<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
    if ids.len() < 2 {
        return None;
    }
    let d = x.cols();
    let mut centroids = Vec::new();
    let mut scatter = Vec::new();
    for &c in &ids {
        let members: Vec<&[f64]> = (0..x.rows()).filter(|&i| labels[i] == c).map(|i| x.row(i)).collect();
        let mu: Vec<f64> = (0..d)
            .map(|k| members.iter().map(|r| r[k]).sum::<f64>() / members.len() as f64)
            .collect();
        let s = members
            .iter()
            .map(|r| r.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / members.len() as f64;
        centroids.push(mu);
        scatter.push(s);
    }
    let k = ids.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        total += worst;
    }
    Some(total / k as f64)
}

// ---------------------------------------------------------------- Jaccard

/// Cosine distance with the contract's conventions: exactly 0 on the
/// diagonal and clamped to `[0, 2]`.
fn cos_dist(x: &Matrix, i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    (1.0 - x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum::<f64>()).clamp(0.0, 2.0)
}

/// All samples ordered by cosine distance from `i`, ties by index.
fn ranking(x: &Matrix, i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| cos_dist(x, i, a).total_cmp(&cos_dist(x, i, b)).then(a.cmp(&b)));
    order
}

/// k-reciprocal Jaccard distance written with explicit sets and dense
/// vectors.
pub fn jaccard_oracle(x: &Matrix, k1: usize, k2: usize) -> Vec<Vec<f64>> {
    let n = x.rows();
    let ranks: Vec<Vec<usize>> = (0..n).map(|i| ranking(x, i)).collect();
    let top = |i: usize, k: usize| -> BTreeSet<usize> { ranks[i][..k + 1].iter().copied().collect() };
    let recip = |i: usize, k: usize| -> BTreeSet<usize> {
        top(i, k).into_iter().filter(|&j| top(j, k).contains(&i)).collect()
    };
    let half = (k1 as f64 / 2.0).round_ties_even() as usize;

    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        let r = recip(i, k1);
        let mut expanded = r.clone();
        for &c in &r {
            let rc = recip(c, half);
            if 3 * rc.intersection(&r).count() > 2 * rc.len() {
                expanded.extend(rc);
            }
        }
        for &j in &expanded {
            v[i][j] = (-cos_dist(x, i, j)).exp();
        }
        // exact duplicates ranked ahead of `i` can leave the set empty; the
        // encoding is then all zero
        let total: f64 = v[i].iter().sum();
        if total > 0.0 {
            v[i].iter_mut().for_each(|w| *w /= total);
        }
    }
    if k2 > 1 {
        v = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| ranks[i][..k2].iter().map(|&r| v[r][j]).sum::<f64>() / k2 as f64)
                    .collect()
            })
            .collect();
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let s: f64 = (0..n).map(|c| v[i][c].min(v[j][c])).sum();
                    (1.0 - s / (2.0 - s)).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------- retrieval

pub struct Scored {
    pub map: f64,
    pub cmc: [f64; 3],
    pub evaluated: usize,
}

/// Quadratic reference scorer: the rank of every valid gallery item is
/// counted directly.
pub fn retrieval_oracle(
    q: &Matrix,
    q_id: &[usize],
    q_cam: &[usize],
    g: &Matrix,
    g_id: &[usize],
    g_cam: &[usize],
) -> Scored {
    let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut ap_sum = 0.0;
    let mut hits = [0usize; 3];
    let mut evaluated = 0;
    for i in 0..q.rows() {
        let valid: Vec<usize> = (0..g.rows())
            .filter(|&j| !(g_id[j] == q_id[i] && g_cam[j] == q_cam[i]))
            .collect();
        if !valid.iter().any(|&j| g_id[j] == q_id[i]) {
            continue;
        }
        evaluated += 1;
        let s = |j: usize| sim(q.row(i), g.row(j));
        let rank = |j: usize| 1 + valid.iter().filter(|&&o| s(o) > s(j) || (s(o) == s(j) && o < j)).count();
        let mut rel_ranks: Vec<usize> = valid.iter().filter(|&&j| g_id[j] == q_id[i]).map(|&j| rank(j)).collect();
        rel_ranks.sort_unstable();
        ap_sum += rel_ranks
            .iter()
            .enumerate()
            .map(|(h, &r)| (h + 1) as f64 / r as f64)
            .sum::<f64>()
            / rel_ranks.len() as f64;
        for (slot, k) in [1usize, 5, 10].into_iter().enumerate() {
            if rel_ranks[0] <= k {
                hits[slot] += 1;
            }
        }
    }
    let e = evaluated.max(1) as f64;
    Scored {
        map: ap_sum / e,
        cmc: hits.map(|h| h as f64 / e),
        evaluated,
    }
}

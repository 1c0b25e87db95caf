//! Two-level map-equation community detection on a thresholded distance graph.
//!
//! Nodes `i != j` are linked when `D(i, j) < psi`, with weight `1 - D(i, j)`.
//! Flow on the undirected graph is proportional to node strength, and the
//! codelength of a partition `M` is
//!
//! ```text
//! L(M) = q log q - 2 sum_m q_m log q_m - sum_a p_a log p_a
//!        + sum_m (q_m + p_m) log(q_m + p_m)
//! ```
//!
//! with `q_m` the exit flow of module `m`, `p_m` its total node flow and
//! `q = sum_m q_m`. Optimization is greedy local moving with module
//! aggregation, followed by fine-tuning passes on the original nodes, over a
//! few node orders; the shortest codelength wins. Isolated nodes carry no
//! flow and are reported as outliers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClusterResult;
use crate::metricspace::DistanceMatrix;
use crate::{Error, Result};

const MIN_IMPROVEMENT: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfomapOptions {
    /// Number of node orders tried; the first is ascending index order.
    pub trials: usize,
    pub seed: u64,
}

impl Default for InfomapOptions {
    fn default() -> Self {
        Self { trials: 8, seed: 0 }
    }
}

fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
struct FlowGraph {
    flow: Vec<f64>,
    exit: Vec<f64>,
    /// Flow along each directed half of an undirected link, no self loops.
    adj: Vec<Vec<(usize, f64)>>,
}

impl FlowGraph {
    fn len(&self) -> usize {
        self.flow.len()
    }

    fn aggregate(&self, module: &[usize], n_modules: usize) -> FlowGraph {
        let mut flow = vec![0.0; n_modules];
        let mut adj: Vec<std::collections::BTreeMap<usize, f64>> =
            vec![Default::default(); n_modules];
        for a in 0..self.len() {
            let ma = module[a];
            flow[ma] += self.flow[a];
            for &(b, f) in &self.adj[a] {
                let mb = module[b];
                if ma != mb {
                    *adj[ma].entry(mb).or_insert(0.0) += f;
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = adj.into_iter().map(|m| m.into_iter().collect()).collect();
        let exit = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        FlowGraph { flow, exit, adj }
    }
}

/// Mutable module bookkeeping for local moving on one level.
struct Modules {
    of: Vec<usize>,
    flow: Vec<f64>,
    exit: Vec<f64>,
    size: Vec<usize>,
    free: Vec<usize>,
    total_exit: f64,
}

impl Modules {
    fn new(g: &FlowGraph, of: Vec<usize>) -> Self {
        let n = g.len();
        let mut flow = vec![0.0; n];
        let mut exit = vec![0.0; n];
        let mut size = vec![0; n];
        for a in 0..n {
            let m = of[a];
            flow[m] += g.flow[a];
            size[m] += 1;
            for &(b, f) in &g.adj[a] {
                if of[b] != m {
                    exit[m] += f;
                }
            }
        }
        let free = (0..n).rev().filter(|&m| size[m] == 0).collect();
        let total_exit = exit.iter().sum();
        Self {
            of,
            flow,
            exit,
            size,
            free,
            total_exit,
        }
    }

    fn count(&self) -> usize {
        self.size.iter().filter(|&&s| s > 0).count()
    }
}

/// Greedy single-node moves until no move improves the codelength.
fn local_moving(g: &FlowGraph, state: &mut Modules, order: &[usize]) -> bool {
    let mut any = false;
    let mut link = vec![0.0; g.len()];
    let mut touched: Vec<usize> = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let mut moved = false;
        for &a in order {
            let cur = state.of[a];
            touched.clear();
            for &(b, f) in &g.adj[a] {
                let m = state.of[b];
                if link[m] == 0.0 {
                    touched.push(m);
                }
                link[m] += f;
            }
            let out_cur = link[cur];
            let cur_exit_new = (state.exit[cur] - g.exit[a] + 2.0 * out_cur).max(0.0);
            let cur_flow_new = state.flow[cur] - g.flow[a];

            let mut candidates: Vec<usize> = touched.iter().copied().filter(|&m| m != cur).collect();
            if state.size[cur] > 1 {
                if let Some(&empty) = state.free.last() {
                    candidates.push(empty);
                }
            }

            let mut best = (cur, 0.0);
            for &b in &candidates {
                let lb = link[b];
                let b_exit_new = (state.exit[b] + g.exit[a] - 2.0 * lb).max(0.0);
                let b_flow_new = state.flow[b] + g.flow[a];
                let q_old = state.total_exit;
                let q_new = q_old - state.exit[cur] - state.exit[b] + cur_exit_new + b_exit_new;
                let delta = plogp(q_new) - plogp(q_old)
                    - 2.0
                        * (plogp(cur_exit_new) + plogp(b_exit_new)
                            - plogp(state.exit[cur])
                            - plogp(state.exit[b]))
                    + (plogp(cur_exit_new + cur_flow_new) + plogp(b_exit_new + b_flow_new)
                        - plogp(state.exit[cur] + state.flow[cur])
                        - plogp(state.exit[b] + state.flow[b]));
                if delta < best.1 {
                    best = (b, delta);
                }
            }

            if best.0 != cur && best.1 < -MIN_IMPROVEMENT {
                let b = best.0;
                let b_exit_new = (state.exit[b] + g.exit[a] - 2.0 * link[b]).max(0.0);
                state.total_exit += cur_exit_new + b_exit_new - state.exit[cur] - state.exit[b];
                state.exit[cur] = cur_exit_new;
                state.flow[cur] = cur_flow_new;
                state.size[cur] -= 1;
                if state.size[b] == 0 {
                    state.free.retain(|&m| m != b);
                }
                state.exit[b] = b_exit_new;
                state.flow[b] += g.flow[a];
                state.size[b] += 1;
                state.of[a] = b;
                if state.size[cur] == 0 {
                    state.exit[cur] = 0.0;
                    state.flow[cur] = 0.0;
                    state.free.push(cur);
                }
                moved = true;
                any = true;
            }
            for &m in &touched {
                link[m] = 0.0;
            }
        }
        if !moved {
            break;
        }
    }
    any
}

/// Renumbers module ids to `0..k` by first appearance.
fn compact(of: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = of
        .iter()
        .map(|&m| {
            let next = map.len();
            *map.entry(m).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Repeated local moving and aggregation starting from `partition` on `g0`.
fn coarsen(g0: &FlowGraph, partition: Vec<usize>, order: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    // Fine pass on the original nodes, seeded with the given partition.
    let mut state = Modules::new(g0, compact(&partition).0);
    local_moving(g0, &mut state, order);
    let (mut partition, k) = compact(&state.of);

    let mut graph = g0.aggregate(&partition, k);
    loop {
        let n = graph.len();
        let mut state = Modules::new(&graph, (0..n).collect());
        let mut level_order: Vec<usize> = (0..n).collect();
        level_order.shuffle(rng);
        local_moving(&graph, &mut state, &level_order);
        if state.count() == n {
            break;
        }
        let (level_modules, k2) = compact(&state.of);
        for m in partition.iter_mut() {
            *m = level_modules[*m];
        }
        graph = graph.aggregate(&level_modules, k2);
    }
    partition
}

fn codelength(g: &FlowGraph, of: &[usize]) -> f64 {
    let n = g.len();
    let mut flow = vec![0.0; n];
    let mut exit = vec![0.0; n];
    let mut node_term = 0.0;
    for a in 0..n {
        flow[of[a]] += g.flow[a];
        node_term += plogp(g.flow[a]);
        for &(b, f) in &g.adj[a] {
            if of[b] != of[a] {
                exit[of[a]] += f;
            }
        }
    }
    let q: f64 = exit.iter().sum();
    plogp(q) - 2.0 * exit.iter().map(|&x| plogp(x)).sum::<f64>() - node_term
        + exit
            .iter()
            .zip(&flow)
            .map(|(&e, &p)| plogp(e + p))
            .sum::<f64>()
}

/// Active (non-isolated) node ids and the flow graph over them.
fn build_graph(dist: &DistanceMatrix, psi: f64) -> (Vec<usize>, FlowGraph) {
    let n = dist.len();
    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist.get(i, j);
            if d < psi {
                let w = 1.0 - d;
                if w > 0.0 {
                    edges[i].push((j, w));
                    edges[j].push((i, w));
                    total += w;
                }
            }
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| !edges[i].is_empty()).collect();
    let mut local = vec![usize::MAX; n];
    for (k, &i) in active.iter().enumerate() {
        local[i] = k;
    }
    let norm = 2.0 * total;
    let adj: Vec<Vec<(usize, f64)>> = active
        .iter()
        .map(|&i| edges[i].iter().map(|&(j, w)| (local[j], w / norm)).collect())
        .collect();
    let flow: Vec<f64> = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
    let exit = flow.clone();
    (active, FlowGraph { flow, exit, adj })
}

/// Map-equation codelength (bits) of `labels` on the graph thresholded at
/// `psi`. Outliers must be exactly the isolated nodes.
pub fn map_equation_codelength(dist: &DistanceMatrix, psi: f64, labels: &[i32]) -> Result<f64> {
    let (active, g) = build_graph(dist, psi);
    let mut of = Vec::with_capacity(active.len());
    for &i in &active {
        let l = labels[i];
        if l < 0 {
            return Err(Error::config("labels", format!("connected node {i} labeled outlier")));
        }
        of.push(l as usize);
    }
    let (of, _) = compact(&of);
    Ok(codelength(&g, &of))
}

/// Two-level Infomap with default options.
pub fn infomap(dist: &DistanceMatrix, psi: f64) -> Result<ClusterResult> {
    infomap_with(dist, psi, InfomapOptions::default())
}

pub fn infomap_with(dist: &DistanceMatrix, psi: f64, opts: InfomapOptions) -> Result<ClusterResult> {
    if !(psi > 0.0 && psi <= 1.0) {
        return Err(Error::config("psi", "must lie in (0, 1]"));
    }
    let n = dist.len();
    let (active, g) = build_graph(dist, psi);
    let mut labels = vec![-1i64; n];
    if active.is_empty() {
        return Ok(ClusterResult::from_raw_labels(&labels));
    }

    let m = g.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for trial in 0..opts.trials.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(trial as u64));
        let mut order: Vec<usize> = (0..m).collect();
        if trial > 0 {
            order.shuffle(&mut rng);
        }
        let mut partition = coarsen(&g, (0..m).collect(), &order, &mut rng);
        let mut len = codelength(&g, &partition);
        loop {
            let refined = coarsen(&g, partition.clone(), &order, &mut rng);
            let refined_len = codelength(&g, &refined);
            if refined_len < len - MIN_IMPROVEMENT {
                partition = refined;
                len = refined_len;
            } else {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| len < b - MIN_IMPROVEMENT) {
            best = Some((len, partition));
        }
    }

    let (_, partition) = best.expect("at least one trial");
    for (k, &i) in active.iter().enumerate() {
        labels[i] = partition[k] as i64;
    }
    Ok(ClusterResult::from_raw_labels(&labels))
}

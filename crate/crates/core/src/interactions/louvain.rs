//! Louvain modularity optimization on small weighted undirected graphs.
//!
//! Modularity uses the adjacency-matrix convention
//! `Q = 1/2m Σ_ij [A_ij - γ k_i k_j / 2m] δ(c_i, c_j)` with `2m = Σ_ij A_ij`.
//! Aggregated graphs carry intra-community weight as self-loops so that `Q`
//! is preserved between levels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Symmetric adjacency lists. A self-loop `(i, i, w)` contributes `w` to `A_ii`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        WeightedGraph {
            adj: vec![Vec::new(); n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds `w` to `A_uv` and `A_vu` (once when `u == v`). Non-positive weights are ignored.
    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) {
        if w.is_nan() || w <= 0.0 {
            return;
        }
        Self::bump(&mut self.adj[u], v, w);
        if u != v {
            Self::bump(&mut self.adj[v], u, w);
        }
    }

    fn bump(list: &mut Vec<(usize, f64)>, to: usize, w: f64) {
        match list.iter_mut().find(|(j, _)| *j == to) {
            Some((_, x)) => *x += w,
            None => list.push((to, w)),
        }
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> f64 {
        self.adj[u].iter().map(|(_, w)| w).sum()
    }

    /// `2m`, the sum of all degrees.
    pub fn total_weight(&self) -> f64 {
        (0..self.node_count()).map(|u| self.degree(u)).sum()
    }
}

pub fn modularity(graph: &WeightedGraph, membership: &[usize], resolution: f64) -> f64 {
    let two_m = graph.total_weight();
    if two_m <= 0.0 {
        return 0.0;
    }
    let communities = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; communities];
    let mut total = vec![0.0; communities];
    for u in 0..graph.node_count() {
        let cu = membership[u];
        total[cu] += graph.degree(u);
        for &(v, w) in graph.neighbors(u) {
            if membership[v] == cu {
                internal[cu] += w;
            }
        }
    }
    internal
        .iter()
        .zip(&total)
        .map(|(&i, &t)| i / two_m - resolution * (t / two_m) * (t / two_m))
        .sum()
}

/// Moves single nodes between communities until no move raises modularity.
/// A node may join a neighboring community or open a new one. Returns
/// whether any node moved; `membership` comes back densely relabeled.
fn move_nodes(graph: &WeightedGraph, membership: &mut Vec<usize>, resolution: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = graph.node_count();
    let two_m = graph.total_weight();
    let degree: Vec<f64> = (0..n).map(|u| graph.degree(u)).collect();
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for u in 0..n {
        tot[membership[u]] += degree[u];
        size[membership[u]] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut moved_any = false;
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    loop {
        let mut moved = false;
        for &u in &order {
            let own = membership[u];
            for &(v, w) in graph.neighbors(u) {
                if v == u {
                    continue;
                }
                let c = membership[v];
                if link[c] == 0.0 {
                    touched.push(c);
                }
                link[c] += w;
            }
            tot[own] -= degree[u];
            size[own] -= 1;
            let gain = |c: usize, link_c: f64| link_c - resolution * tot[c] * degree[u] / two_m;

            let mut best = own;
            let mut best_gain = gain(own, link[own]);
            touched.sort_unstable();
            for &c in &touched {
                let g = gain(c, link[c]);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            if size[own] > 0 && best_gain < -1e-12 {
                // An empty community has gain 0; `own` is free only if u was alone.
                if let Some(empty) = (0..n).find(|&c| size[c] == 0) {
                    best = empty;
                }
            }
            tot[best] += degree[u];
            size[best] += 1;
            if best != own {
                membership[u] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                link[c] = 0.0;
            }
            link[own] = 0.0;
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    *membership = relabel(membership);
    moved_any
}

fn relabel(membership: &[usize]) -> Vec<usize> {
    let mut map = vec![usize::MAX; membership.len()];
    let mut next = 0;
    membership
        .iter()
        .map(|&c| {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect()
}

fn aggregate(graph: &WeightedGraph, membership: &[usize]) -> WeightedGraph {
    let k = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = WeightedGraph::new(k);
    for u in 0..graph.node_count() {
        for &(v, w) in graph.neighbors(u) {
            let (cu, cv) = (membership[u], membership[v]);
            // Visiting every (u, v) entry sums A over ordered pairs, which is
            // exactly the aggregated matrix entry, self-loops included.
            WeightedGraph::bump(&mut out.adj[cu], cv, w);
        }
    }
    out
}

/// Largest community count for which pairwise merge refinement is tried.
const MERGE_LIMIT: usize = 64;

fn multilevel(graph: &WeightedGraph, membership: &mut Vec<usize>, resolution: f64, rng: &mut ChaCha8Rng) {
    loop {
        let mut current = aggregate(graph, membership);
        while current.node_count() > 1 {
            let mut level: Vec<usize> = (0..current.node_count()).collect();
            if !move_nodes(&current, &mut level, resolution, rng) {
                break;
            }
            for c in membership.iter_mut() {
                *c = level[*c];
            }
            current = aggregate(&current, &level);
        }
        if !move_nodes(graph, membership, resolution, rng) {
            break;
        }
    }
}

/// Tries merging each pair of adjacent communities followed by node-level
/// moves, keeping the first strict improvement. Returns whether one was found.
fn merge_refine(graph: &WeightedGraph, membership: &mut Vec<usize>, resolution: f64, rng: &mut ChaCha8Rng) -> bool {
    let k = membership.iter().copied().max().map_or(0, |m| m + 1);
    if !(2..=MERGE_LIMIT).contains(&k) {
        return false;
    }
    let base = modularity(graph, membership, resolution);
    let coarse = aggregate(graph, membership);
    for a in 0..k {
        for &(b, _) in coarse.neighbors(a) {
            if b <= a {
                continue;
            }
            let mut trial: Vec<usize> = membership.iter().map(|&c| if c == b { a } else { c }).collect();
            trial = relabel(&trial);
            multilevel(graph, &mut trial, resolution, rng);
            if modularity(graph, &trial, resolution) > base + 1e-12 {
                *membership = trial;
                return true;
            }
        }
    }
    false
}

/// Independent restarts per call; the best partition wins.
const RESTARTS: usize = 8;

/// Community label per node. Labels are dense and ordered by each
/// community's lowest node index. Deterministic for a fixed seed.
///
/// Each restart runs multilevel Louvain with node-level refinement on the
/// original graph, then pairwise community merges re-refined until none
/// improves modularity. Restart seeds are drawn from `seed`; the highest
/// modularity wins, the earliest restart on ties.
pub fn louvain(graph: &WeightedGraph, resolution: f64, seed: u64) -> Vec<usize> {
    let n = graph.node_count();
    if n == 0 {
        return Vec::new();
    }
    if graph.total_weight() <= 0.0 {
        return (0..n).collect();
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds.random());
        let mut membership: Vec<usize> = (0..n).collect();
        multilevel(graph, &mut membership, resolution, &mut rng);
        while merge_refine(graph, &mut membership, resolution, &mut rng) {}
        let q = modularity(graph, &membership, resolution);
        if best.as_ref().is_none_or(|(b, _)| q > *b + 1e-12) {
            best = Some((q, membership));
        }
    }
    relabel(&best.expect("at least one restart").1)
}

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use super::BenchError;

/// Distance of unreachable nodes.
pub const INFINITY: u64 = u64::MAX;

/// Largest edge weight used by the benchmarks.
pub const MAX_WEIGHT: u32 = 100_000_000;

/// Directed graph with positive integer edge weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<(u32, u32)>>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    /// Builds a graph from `(from, to, weight)` triples.
    pub fn from_edges(n: usize, edges: &[(u32, u32, u32)]) -> Self {
        let mut g = Self::new(n);
        for &(u, v, w) in edges {
            g.add_edge(u, v, w);
        }
        g
    }

    pub fn add_edge(&mut self, from: u32, to: u32, weight: u32) {
        assert!(weight >= 1, "weights are positive");
        self.adj[from as usize].push((to, weight));
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    /// Outgoing `(target, weight)` pairs.
    pub fn edges(&self, node: u32) -> &[(u32, u32)] {
        &self.adj[node as usize]
    }
}

/// Erdős–Rényi graph: every ordered pair of distinct nodes is an edge with
/// probability `p`, weighted uniformly in `[1, wmax]`.
pub fn gen_gnp(n: usize, p: f64, seed: u64, wmax: u32) -> Result<Graph, BenchError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BenchError::Config(format!("edge probability {p} outside [0, 1]")));
    }
    if wmax == 0 {
        return Err(BenchError::Config("maximum weight must be positive".into()));
    }
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut g = Graph::new(n);
    for u in 0..n as u32 {
        for v in 0..n as u32 {
            if u != v && rng.random_bool(p) {
                g.add_edge(u, v, rng.random_range(1..=wmax));
            }
        }
    }
    Ok(g)
}

/// Sequential Dijkstra with a binary heap. Unreachable nodes get [`INFINITY`].
pub fn dijkstra_ref(g: &Graph, source: u32) -> Vec<u64> {
    let mut dist = vec![INFINITY; g.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source as usize] = 0;
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u as usize] {
            continue;
        }
        for &(v, w) in g.edges(u) {
            let nd = d + w as u64;
            if nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

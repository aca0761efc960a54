//! Thresholded match graph and the transitivity feasibility check.

use std::collections::HashMap;

use super::assignment::UnionFind;
use crate::data::{ProbAssignment, TableSide, TupleRef};

/// Tuples of a pair set partitioned by the pairs whose probability exceeds
/// a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGraph {
    nodes: Vec<TupleRef>,
    lookup: HashMap<TupleRef, usize>,
    /// `(u, v, gamma)` with node indices `u < v`.
    edges: Vec<(usize, usize, f64)>,
    component_of: Vec<usize>,
    components: Vec<Vec<usize>>,
    zero_sides: Vec<TableSide>,
}

/// Edges are the pairs with probability above 0.5.
pub fn build_match_graph(gamma: &ProbAssignment) -> PairGraph {
    PairGraph::with_threshold(gamma, 0.5)
}

impl PairGraph {
    /// Edges are the pairs with probability strictly above `threshold`;
    /// a negative threshold keeps every candidate pair.
    pub fn with_threshold(gamma: &ProbAssignment, threshold: f64) -> Self {
        let index = gamma.pair_set().tuples();
        let nodes = index.tuples().to_vec();
        let lookup = nodes.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut uf = UnionFind::new(nodes.len());
        let mut edges = Vec::new();
        for (&(u, v), &g) in index.endpoints().iter().zip(gamma.probs()) {
            if g > threshold {
                uf.union(u, v);
                edges.push((u.min(v), u.max(v), g));
            }
        }
        let mut component_of = vec![usize::MAX; nodes.len()];
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut root_comp: HashMap<usize, usize> = HashMap::new();
        for i in 0..nodes.len() {
            let root = uf.find(i);
            let c = *root_comp.entry(root).or_insert_with(|| {
                components.push(Vec::new());
                components.len() - 1
            });
            component_of[i] = c;
            components[c].push(i);
        }
        PairGraph {
            nodes,
            lookup,
            edges,
            component_of,
            components,
            zero_sides: Vec::new(),
        }
    }

    /// Every candidate pair connects its endpoints.
    pub fn candidates(gamma: &ProbAssignment) -> Self {
        PairGraph::with_threshold(gamma, f64::NEG_INFINITY)
    }

    /// Treats pairs of two tuples from `side` as known non-matches with
    /// probability 0, as holds for a duplicate-free table.
    pub fn with_zero_same_side(mut self, side: TableSide) -> Self {
        if !self.zero_sides.contains(&side) {
            self.zero_sides.push(side);
        }
        self
    }

    pub fn nodes(&self) -> &[TupleRef] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Components in order of their smallest node; each sorted.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, t: &TupleRef) -> Option<usize> {
        self.lookup.get(t).map(|&i| self.component_of[i])
    }

    pub fn node_index(&self, t: &TupleRef) -> Option<usize> {
        self.lookup.get(t).copied()
    }

    /// Node-index adjacency lists of the thresholded edges, sorted.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(u, v, _) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub pivot: TupleRef,
    pub j: TupleRef,
    pub k: TupleRef,
    /// `gamma(pivot, j) * gamma(pivot, k) - gamma(j, k)`, positive.
    pub magnitude: f64,
}

/// Reports every triple `(i; j, k)` inside one component of `scope` whose
/// three pairs are all defined and `gamma(i,j) * gamma(i,k) > gamma(j,k)`.
/// A pair is defined when it is a candidate in `gamma` or joins two tuples
/// of a side marked zero on `scope`.
pub fn check_feasibility(gamma: &ProbAssignment, scope: &PairGraph) -> Vec<Violation> {
    let index = gamma.pair_set().tuples();
    let local: Vec<Option<usize>> = index.tuples().iter().map(|t| scope.node_index(t)).collect();
    let mut value: HashMap<(usize, usize), f64> = HashMap::new();
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for (&(u, v), &g) in index.endpoints().iter().zip(gamma.probs()) {
        let (Some(u), Some(v)) = (local[u], local[v]) else {
            continue;
        };
        if scope.component_of[u] != scope.component_of[v] {
            continue;
        }
        value.insert((u.min(v), u.max(v)), g);
        adj.entry(u).or_default().push(v);
        adj.entry(v).or_default().push(u);
    }
    let lookup = |a: usize, b: usize| -> Option<f64> {
        if let Some(&g) = value.get(&(a.min(b), a.max(b))) {
            return Some(g);
        }
        let (sa, sb) = (scope.nodes[a].side, scope.nodes[b].side);
        (sa == sb && scope.zero_sides.contains(&sa)).then_some(0.0)
    };
    let mut pivots: Vec<usize> = adj.keys().copied().collect();
    pivots.sort_unstable();
    let mut out = Vec::new();
    for i in pivots {
        let mut nb = adj[&i].clone();
        nb.sort_unstable();
        nb.dedup();
        for (x, &j) in nb.iter().enumerate() {
            for &k in &nb[x + 1..] {
                let Some(gjk) = lookup(j, k) else { continue };
                let gij = value[&(i.min(j), i.max(j))];
                let gik = value[&(i.min(k), i.max(k))];
                let magnitude = gij * gik - gjk;
                if magnitude > 0.0 {
                    out.push(Violation {
                        pivot: scope.nodes[i].clone(),
                        j: scope.nodes[j].clone(),
                        k: scope.nodes[k].clone(),
                        magnitude,
                    });
                }
            }
        }
    }
    out
}

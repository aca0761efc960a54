//! Sparse bipartite matching by successive shortest augmenting paths with
//! Dijkstra on reduced costs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingMode {
    /// Minimum cost among matchings of maximum cardinality.
    MaxCardinality,
    /// Minimum cost over all matchings of any size; only negative-cost
    /// augmentations are taken.
    MaxWeight,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentInstance {
    pub n_left: usize,
    pub n_right: usize,
    /// `(left, right, cost)`; repeated `(left, right)` keep the lowest cost.
    pub edges: Vec<(usize, usize, f64)>,
}

impl AssignmentInstance {
    pub fn dense(costs: &[Vec<f64>]) -> Self {
        let n_right = costs.first().map_or(0, Vec::len);
        let edges = costs
            .iter()
            .enumerate()
            .flat_map(|(l, row)| row.iter().enumerate().map(move |(r, &c)| (l, r, c)))
            .collect();
        AssignmentInstance {
            n_left: costs.len(),
            n_right,
            edges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(left, right)` sorted by left index.
    pub matched: Vec<(usize, usize)>,
    pub objective: f64,
}

/// Minimum-cost maximum-cardinality matching.
pub fn solve_assignment(instance: &AssignmentInstance) -> Result<Assignment> {
    solve_assignment_with(instance, MatchingMode::MaxCardinality)
}

pub fn solve_assignment_with(instance: &AssignmentInstance, mode: MatchingMode) -> Result<Assignment> {
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    for &(l, r, c) in &instance.edges {
        if !c.is_finite() {
            return Err(Error::Numerical(format!("assignment cost {c} for ({l}, {r})")));
        }
        if l >= instance.n_left || r >= instance.n_right {
            return Err(Error::Config(format!("assignment edge ({l}, {r}) out of range")));
        }
        best.entry((l, r))
            .and_modify(|old| *old = old.min(c))
            .or_insert(c);
    }
    let mut edges: Vec<(usize, usize, f64)> = best.into_iter().map(|((l, r), c)| (l, r, c)).collect();
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    // components over left nodes 0..L and right nodes L..L+R
    let n = instance.n_left + instance.n_right;
    let mut uf = UnionFind::new(n);
    for &(l, r, _) in &edges {
        uf.union(l, instance.n_left + r);
    }
    let mut groups: HashMap<usize, Vec<(usize, usize, f64)>> = HashMap::new();
    let mut order = Vec::new();
    for &e in &edges {
        let root = uf.find(e.0);
        groups
            .entry(root)
            .or_insert_with(|| {
                order.push(root);
                Vec::new()
            })
            .push(e);
    }
    let mut out = Assignment::default();
    for root in order {
        let comp = solve_component(&groups[&root], mode);
        out.objective += comp.objective;
        out.matched.extend(comp.matched);
    }
    out.matched.sort_unstable();
    Ok(out)
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            Ordering::Less => self.parent[a] = b,
            Ordering::Greater => self.parent[b] = a,
            Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: u8,
    cost: f64,
    rev: usize,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn solve_component(edges: &[(usize, usize, f64)], mode: MatchingMode) -> Assignment {
    let mut lefts: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let mut rights: Vec<usize> = edges.iter().map(|e| e.1).collect();
    lefts.sort_unstable();
    lefts.dedup();
    rights.sort_unstable();
    rights.dedup();
    let (nl, nr) = (lefts.len(), rights.len());
    let source = 0;
    let sink = nl + nr + 1;
    let n = sink + 1;
    let mut graph: Vec<Vec<Arc>> = vec![Vec::new(); n];
    let add = |graph: &mut Vec<Vec<Arc>>, u: usize, v: usize, cost: f64| {
        let (ru, rv) = (graph[v].len(), graph[u].len());
        graph[u].push(Arc { to: v, cap: 1, cost, rev: ru });
        graph[v].push(Arc { to: u, cap: 0, cost: -cost, rev: rv });
    };
    for i in 0..nl {
        add(&mut graph, source, 1 + i, 0.0);
    }
    let mut potential = vec![0.0; n];
    let mut col_min = vec![f64::INFINITY; nr];
    for &(l, r, c) in edges {
        let li = lefts.binary_search(&l).unwrap();
        let ri = rights.binary_search(&r).unwrap();
        add(&mut graph, 1 + li, 1 + nl + ri, c);
        col_min[ri] = col_min[ri].min(c);
    }
    for j in 0..nr {
        add(&mut graph, 1 + nl + j, sink, 0.0);
        potential[1 + nl + j] = col_min[j];
    }
    potential[sink] = col_min.iter().copied().fold(f64::INFINITY, f64::min);

    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<(usize, usize)> = vec![(usize::MAX, 0); n];
    loop {
        dist.fill(f64::INFINITY);
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for (ei, a) in graph[u].iter().enumerate() {
                if a.cap == 0 {
                    continue;
                }
                let reduced = (a.cost + potential[u] - potential[a.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[a.to] {
                    dist[a.to] = nd;
                    parent[a.to] = (u, ei);
                    heap.push(Entry(nd, a.to));
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let path_cost = dist[sink] + potential[sink] - potential[source];
        if mode == MatchingMode::MaxWeight && path_cost >= -1e-12 {
            break;
        }
        let reach = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
        for v in 0..n {
            potential[v] += if dist[v].is_finite() { dist[v] } else { reach };
        }
        let mut v = sink;
        while v != source {
            let (u, ei) = parent[v];
            graph[u][ei].cap -= 1;
            let rev = graph[u][ei].rev;
            graph[v][rev].cap += 1;
            v = u;
        }
    }

    let mut out = Assignment::default();
    for li in 0..nl {
        for a in &graph[1 + li] {
            if a.to > nl && a.to <= nl + nr && a.cap == 0 {
                out.matched.push((lefts[li], rights[a.to - 1 - nl]));
                out.objective += a.cost;
            }
        }
    }
    out
}

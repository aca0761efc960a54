//! Pairwise tests assembled into a chordal dependency graph.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{counts_table, estimate_hidden, overlap_test, split_lfs, DependencyCounts, HiddenVoteEstimate, SplitLf};
use crate::data::{LabelingMatrix, ProbAssignment};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepConfig {
    pub c: f64,
    pub max_rounds: usize,
    /// Unordered source-LF pairs allowed to be dependent, e.g. LFs reading a
    /// shared attribute. `None` tests every pair.
    pub pair_mask: Option<Vec<(usize, usize)>>,
}

impl Default for DepConfig {
    fn default() -> Self {
        DepConfig {
            c: 0.05,
            max_rounds: 3,
            pair_mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    /// Split indices in voting order: the part with more votes goes first.
    pub first: usize,
    pub second: usize,
    pub counts: DependencyCounts,
    pub hidden: HiddenVoteEstimate,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepEdge {
    /// Split indices with `a < b`.
    pub a: usize,
    pub b: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependencyGraph {
    pub nodes: Vec<SplitLf>,
    pub tests: Vec<PairTest>,
    pub edges: Vec<DepEdge>,
    /// Edges dropped to break chordless cycles, in removal order.
    pub removed: Vec<DepEdge>,
    /// The edge set is chordal.
    pub triangulated: bool,
    pub rounds: usize,
    /// The edge set was unchanged between the last two rounds.
    pub stable: bool,
}

impl DependencyGraph {
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let (a, b) = (a.min(b), a.max(b));
        self.edges.iter().any(|e| e.a == a && e.b == b)
    }

    pub fn node_of(&self, source_lf: usize, polarity: super::Polarity) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.source_lf == source_lf && n.polarity == polarity)
    }

    fn edge_keys(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.a, e.b)).collect()
    }
}

fn voting_order(nodes: &[SplitLf], i: usize, j: usize) -> (usize, usize) {
    let key = |k: usize| (std::cmp::Reverse(nodes[k].n_votes()), k);
    if key(i) <= key(j) {
        (i, j)
    } else {
        (j, i)
    }
}

fn run_tests(nodes: &[SplitLf], gamma: &ProbAssignment, cfg: &DepConfig) -> Result<Vec<PairTest>> {
    let y = gamma.labels();
    let mask: Option<HashSet<(usize, usize)>> = cfg
        .pair_mask
        .as_ref()
        .map(|m| m.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect());
    let mut pairs = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if nodes[i].polarity != nodes[j].polarity || nodes[i].source_lf == nodes[j].source_lf {
                continue;
            }
            let (si, sj) = (nodes[i].source_lf, nodes[j].source_lf);
            if mask.as_ref().is_some_and(|m| !m.contains(&(si.min(sj), si.max(sj)))) {
                continue;
            }
            pairs.push(voting_order(nodes, i, j));
        }
    }
    pairs
        .into_par_iter()
        .map(|(first, second)| {
            let counts = counts_table(&nodes[first], &nodes[second], &y)?;
            let hidden = estimate_hidden(&counts);
            let (p_value, reject) = overlap_test(&counts, &hidden, cfg.c);
            Ok(PairTest {
                first,
                second,
                counts,
                hidden,
                p_value,
                reject,
            })
        })
        .collect()
}

/// A chordless cycle of length at least four, if one exists. For every
/// vertex `v` and non-adjacent pair of its neighbours, the shortest path
/// between them that avoids `v`'s other neighbours closes such a cycle.
pub fn find_chordless_cycle(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    for v in 0..n {
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        for x in 0..nb.len() {
            for y in x + 1..nb.len() {
                let (s, t) = (nb[x], nb[y]);
                if adj[s].contains(&t) {
                    continue;
                }
                let blocked = |u: usize| u == v || (adj[v].contains(&u) && u != s && u != t);
                let mut prev = vec![usize::MAX; n];
                prev[s] = s;
                let mut queue = VecDeque::from([s]);
                while let Some(u) = queue.pop_front() {
                    if u == t {
                        break;
                    }
                    for &w in &adj[u] {
                        if prev[w] == usize::MAX && !blocked(w) {
                            prev[w] = u;
                            queue.push_back(w);
                        }
                    }
                }
                if prev[t] == usize::MAX {
                    continue;
                }
                let mut cycle = vec![v];
                let mut u = t;
                let mut path = vec![t];
                while u != s {
                    u = prev[u];
                    path.push(u);
                }
                path.reverse();
                cycle.extend(path);
                return Some(cycle);
            }
        }
    }
    None
}

/// Removes the weakest edge (largest p-value) of each chordless cycle until
/// none is left.
fn triangulate(n: usize, mut edges: Vec<DepEdge>) -> (Vec<DepEdge>, Vec<DepEdge>) {
    let mut removed = Vec::new();
    loop {
        let keys: Vec<(usize, usize)> = edges.iter().map(|e| (e.a, e.b)).collect();
        let Some(cycle) = find_chordless_cycle(n, &keys) else {
            return (edges, removed);
        };
        let mut worst: Option<usize> = None;
        for w in 0..cycle.len() {
            let (a, b) = (cycle[w], cycle[(w + 1) % cycle.len()]);
            let (a, b) = (a.min(b), a.max(b));
            let idx = edges.iter().position(|e| e.a == a && e.b == b).expect("cycle edge");
            if worst.is_none_or(|k| edges[idx].p_value > edges[k].p_value) {
                worst = Some(idx);
            }
        }
        removed.push(edges.remove(worst.expect("non-empty cycle")));
    }
}

fn build(nodes: Vec<SplitLf>, tests: Vec<PairTest>) -> DependencyGraph {
    let mut edges: Vec<DepEdge> = tests
        .iter()
        .filter(|t| t.reject)
        .map(|t| DepEdge {
            a: t.first.min(t.second),
            b: t.first.max(t.second),
            p_value: t.p_value,
        })
        .collect();
    edges.sort_by_key(|e| (e.a, e.b));
    let (edges, removed) = triangulate(nodes.len(), edges);
    DependencyGraph {
        nodes,
        tests,
        edges,
        removed,
        triangulated: true,
        rounds: 0,
        stable: false,
    }
}

/// Tests every same-polarity pair of split LFs against the hard labels of
/// `gamma`. The labeling model does not consume the graph, so the labels
/// stay fixed across rounds and the edge set settles on the second round.
pub fn infer_dependency_graph(x: &LabelingMatrix, gamma: &ProbAssignment, cfg: &DepConfig) -> Result<DependencyGraph> {
    infer_dependency_graph_with(x, gamma, cfg, |_, g| Ok(g.clone()))
}

/// As [`infer_dependency_graph`], with `relabel` producing the labels for
/// the next round from the current graph.
pub fn infer_dependency_graph_with(
    x: &LabelingMatrix,
    gamma: &ProbAssignment,
    cfg: &DepConfig,
    mut relabel: impl FnMut(&DependencyGraph, &ProbAssignment) -> Result<ProbAssignment>,
) -> Result<DependencyGraph> {
    if !(cfg.c > 0.0 && cfg.c < 1.0) {
        return Err(Error::Config(format!("significance level {} outside (0, 1)", cfg.c)));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    if gamma.len() != x.n_pairs() {
        return Err(Error::DimensionMismatch {
            expected: x.n_pairs(),
            got: gamma.len(),
        });
    }
    let nodes = split_lfs(x);
    let mut labels = gamma.clone();
    let mut graph = build(nodes.clone(), run_tests(&nodes, &labels, cfg)?);
    graph.rounds = 1;
    for round in 2..=cfg.max_rounds {
        labels = relabel(&graph, &labels)?;
        let mut next = build(nodes.clone(), run_tests(&nodes, &labels, cfg)?);
        next.rounds = round;
        let same = next.edge_keys() == graph.edge_keys();
        graph = next;
        if same {
            graph.stable = true;
            break;
        }
    }
    Ok(graph)
}

/// `lf_a,polarity_a,lf_b,polarity_b,p_value_bound,dependent`, one row per
/// tested pair with the pair and the rows in lexicographic order.
pub fn write_dependency_report<W: Write>(graph: &DependencyGraph, out: W) -> Result<()> {
    let mut rows: Vec<(String, &str, String, &str, f64, bool)> = graph
        .tests
        .iter()
        .map(|t| {
            let (p, q) = (&graph.nodes[t.first], &graph.nodes[t.second]);
            let (p, q) = if (&p.name, p.polarity) <= (&q.name, q.polarity) { (p, q) } else { (q, p) };
            (
                p.name.clone(),
                p.polarity.as_str(),
                q.name.clone(),
                q.polarity.as_str(),
                t.p_value,
                graph.has_edge(t.first, t.second),
            )
        })
        .collect();
    rows.sort_by(|x, y| (&x.0, x.1, &x.2, x.3).cmp(&(&y.0, y.1, &y.2, y.3)));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["lf_a", "polarity_a", "lf_b", "polarity_b", "p_value_bound", "dependent"])?;
    for (a, pa, b, pb, p, dep) in rows {
        w.write_record([a.as_str(), pa, b.as_str(), pb, &format!("{p:e}"), if dep { "true" } else { "false" }])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(super) fn triangulate_for_tests(n: usize, edges: Vec<DepEdge>) -> (Vec<DepEdge>, Vec<DepEdge>) {
    triangulate(n, edges)
}

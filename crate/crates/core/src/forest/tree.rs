//! CART growth on presorted columns, depth truncation and minimal
//! cost-complexity pruning.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureSubsample, ForestHyperParams};
use crate::data::Label;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        neg: u32,
        pos: u32,
    },
}

/// A fitted binary tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl DecisionTree {
    /// A tree that is a single leaf with the given class counts.
    pub fn leaf(neg: u32, pos: u32, n_features: usize) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { neg, pos }],
            n_features,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn leaf_for(&self, row: &[f64]) -> (u32, u32) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { neg, pos } => return (neg, pos),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Positive-class fraction of the leaf reached by `row`.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let (neg, pos) = self.leaf_for(row);
        if neg + pos == 0 {
            return 0.5;
        }
        f64::from(pos) / f64::from(neg + pos)
    }
}

/// Row indices of a dataset sorted by each feature, ties by row index.
#[derive(Debug, Clone)]
pub(crate) struct Presorted {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    labels: Vec<bool>,
}

impl Presorted {
    pub(crate) fn new(features: ArrayView2<'_, f64>, labels: &[Label]) -> Self {
        let (n, m) = features.dim();
        let columns: Vec<Vec<f64>> = (0..m).map(|f| features.column(f).to_vec()).collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted {
            columns,
            order,
            labels: labels.iter().map(|l| l.is_match()).collect(),
        }
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub(crate) fn n_features(&self) -> usize {
        self.columns.len()
    }
}

/// Growth-time node: every node keeps its class weights so the tree can be
/// truncated or pruned afterwards.
#[derive(Debug, Clone)]
struct GrowNode {
    neg: u32,
    pos: u32,
    split: Option<(usize, f64, usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct GrownTree {
    nodes: Vec<GrowNode>,
    n_features: usize,
}

fn gini(neg: u64, pos: u64) -> f64 {
    let w = (neg + pos) as f64;
    if w == 0.0 {
        return 0.0;
    }
    let (p, q) = (pos as f64 / w, neg as f64 / w);
    1.0 - p * p - q * q
}

pub(crate) fn tree_seed(seed: u64, tree_index: usize) -> u64 {
    // splitmix64 finalizer over (seed, index)
    let mut z = seed ^ (tree_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-row multiplicities of a bootstrap draw over `rows`.
pub(crate) fn bootstrap_weights(n_total: usize, rows: &[u32], bootstrap: bool, seed: u64) -> Vec<u32> {
    let mut w = vec![0u32; n_total];
    if !bootstrap {
        for &r in rows {
            w[r as usize] = 1;
        }
        return w;
    }
    let mut rng = stream_rng(seed, 0);
    for _ in 0..rows.len() {
        let r = rows[rng.gen_range(0..rows.len())];
        w[r as usize] += 1;
    }
    w
}

struct Grower<'a> {
    data: &'a Presorted,
    weights: &'a [u32],
    params: &'a ForestHyperParams,
    seed: u64,
    n_candidates: usize,
    go_left: Vec<bool>,
    nodes: Vec<GrowNode>,
}

impl Grower<'_> {
    fn grow(&mut self, lists: Vec<Vec<u32>>, depth: usize, heap: u64) -> usize {
        let (mut neg, mut pos) = (0u32, 0u32);
        for &r in &lists[0] {
            let w = self.weights[r as usize];
            if self.data.labels[r as usize] {
                pos += w;
            } else {
                neg += w;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(GrowNode {
            neg,
            pos,
            split: None,
        });
        if neg == 0 || pos == 0 || depth >= self.params.d_max || neg + pos < 2 {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&lists, neg, pos, heap) else {
            return id;
        };
        let col = &self.data.columns[feature];
        for &r in &lists[0] {
            self.go_left[r as usize] = col[r as usize] <= threshold;
        }
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in &lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&r| self.go_left[r as usize]);
            left_lists.push(l);
            right_lists.push(r);
        }
        drop(lists);
        let left = self.grow(left_lists, depth + 1, heap * 2);
        let right = self.grow(right_lists, depth + 1, heap * 2 + 1);
        self.nodes[id].split = Some((feature, threshold, left, right));
        id
    }

    fn best_split(&self, lists: &[Vec<u32>], neg: u32, pos: u32, heap: u64) -> Option<(usize, f64)> {
        let m = self.data.n_features();
        let mut feats: Vec<usize> = (0..m).collect();
        let mut rng = stream_rng(self.seed, heap);
        feats.shuffle(&mut rng);
        let total = u64::from(neg) + u64::from(pos);
        let mut best: Option<(f64, usize, f64)> = None;
        for (visited, &f) in feats.iter().enumerate() {
            if visited >= self.n_candidates && best.is_some() {
                break;
            }
            let col = &self.data.columns[f];
            let list = &lists[f];
            let (mut ln, mut lp) = (0u64, 0u64);
            for k in 0..list.len() - 1 {
                let r = list[k] as usize;
                let w = u64::from(self.weights[r]);
                if self.data.labels[r] {
                    lp += w;
                } else {
                    ln += w;
                }
                let (v, next) = (col[r], col[list[k + 1] as usize]);
                if v >= next {
                    continue;
                }
                let (rn, rp) = (u64::from(neg) - ln, u64::from(pos) - lp);
                let score = ((ln + lp) as f64 * gini(ln, lp) + (rn + rp) as f64 * gini(rn, rp))
                    / total as f64;
                if best.is_none_or(|(s, _, _)| score < s) {
                    let mut thr = 0.5 * (v + next);
                    if thr >= next {
                        thr = v;
                    }
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl GrownTree {
    /// Grows a tree on `rows` of `data` to depth `params.d_max`, unpruned.
    pub(crate) fn grow(data: &Presorted, rows: &[u32], params: &ForestHyperParams, seed: u64) -> Self {
        let n = data.n_rows();
        let weights = bootstrap_weights(n, rows, params.bootstrap, seed);
        let lists: Vec<Vec<u32>> = data
            .order
            .iter()
            .map(|ord| ord.iter().copied().filter(|&r| weights[r as usize] > 0).collect())
            .collect();
        let m = data.n_features();
        let n_candidates = match params.feature_subsample {
            FeatureSubsample::All => m,
            FeatureSubsample::SqrtCeil => (m as f64).sqrt().ceil() as usize,
        }
        .clamp(1, m.max(1));
        let mut grower = Grower {
            data,
            weights: &weights,
            params,
            seed,
            n_candidates,
            go_left: vec![false; n],
            nodes: Vec::new(),
        };
        if lists.first().is_none_or(|l| l.is_empty()) {
            return GrownTree {
                nodes: vec![GrowNode {
                    neg: 0,
                    pos: 0,
                    split: None,
                }],
                n_features: m,
            };
        }
        grower.grow(lists, 0, 1);
        GrownTree {
            nodes: grower.nodes,
            n_features: m,
        }
    }

    /// Collapses every node at depth `max_depth` into a leaf, then applies
    /// minimal cost-complexity pruning at `ccp_alpha`.
    pub(crate) fn finalize(&self, max_depth: usize, ccp_alpha: f64) -> DecisionTree {
        let n = self.nodes.len();
        let mut children: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut depth = vec![0usize; n];
        for i in 0..n {
            if let Some((_, _, l, r)) = self.nodes[i].split {
                if depth[i] < max_depth {
                    children[i] = Some((l, r));
                    depth[l] = depth[i] + 1;
                    depth[r] = depth[i] + 1;
                }
            }
        }
        if ccp_alpha > 0.0 {
            self.prune(&mut children, ccp_alpha);
        }
        self.compact(&children)
    }

    fn prune(&self, children: &mut [Option<(usize, usize)>], ccp_alpha: f64) {
        let n = self.nodes.len();
        let root_w = f64::from(self.nodes[0].neg + self.nodes[0].pos);
        if root_w == 0.0 {
            return;
        }
        let risk: Vec<f64> = self
            .nodes
            .iter()
            .map(|nd| {
                f64::from(nd.neg + nd.pos) / root_w * gini(u64::from(nd.neg), u64::from(nd.pos))
            })
            .collect();
        // children always have larger indices than their parent
        let mut subtree_risk = vec![0.0; n];
        let mut leaves = vec![0usize; n];
        loop {
            for i in (0..n).rev() {
                match children[i] {
                    None => {
                        subtree_risk[i] = risk[i];
                        leaves[i] = 1;
                    }
                    Some((l, r)) => {
                        subtree_risk[i] = subtree_risk[l] + subtree_risk[r];
                        leaves[i] = leaves[l] + leaves[r];
                    }
                }
            }
            let mut weakest: Option<(f64, usize)> = None;
            let mut reachable = vec![false; n];
            reachable[0] = true;
            for i in 0..n {
                if !reachable[i] {
                    continue;
                }
                if let Some((l, r)) = children[i] {
                    reachable[l] = true;
                    reachable[r] = true;
                    let alpha = ((risk[i] - subtree_risk[i]).max(0.0)) / (leaves[i] - 1) as f64;
                    if weakest.is_none_or(|(a, _)| alpha < a) {
                        weakest = Some((alpha, i));
                    }
                }
            }
            match weakest {
                Some((alpha, i)) if alpha <= ccp_alpha => children[i] = None,
                _ => break,
            }
        }
    }

    fn compact(&self, children: &[Option<(usize, usize)>]) -> DecisionTree {
        let mut out = Vec::new();
        fn emit(
            src: &GrownTree,
            children: &[Option<(usize, usize)>],
            i: usize,
            out: &mut Vec<Node>,
        ) -> usize {
            let id = out.len();
            let nd = &src.nodes[i];
            match (children[i], nd.split) {
                (Some((l, r)), Some((feature, threshold, _, _))) => {
                    out.push(Node::Leaf { neg: 0, pos: 0 });
                    let left = emit(src, children, l, out);
                    let right = emit(src, children, r, out);
                    out[id] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                }
                _ => out.push(Node::Leaf {
                    neg: nd.neg,
                    pos: nd.pos,
                }),
            }
            id
        }
        emit(self, children, 0, &mut out);
        DecisionTree {
            nodes: out,
            n_features: self.n_features,
        }
    }
}

//! Synthetic corpora with known ground truth and brute-force reference
//! solvers for testing.
//!
//! The oracles deliberately share no code with the routines they check.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GroundTruth, Label, LabelingMatrix, PairId, PairSet, TaskKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfSpec {
    /// Probability of a correct vote given that the LF votes.
    pub accuracy: f64,
    pub abstain: f64,
}

/// LF `target` becomes a copy of LF `source` whose votes are negated with
/// probability `flip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateSpec {
    pub target: usize,
    pub source: usize,
    pub flip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task_kind: TaskKind,
    pub n_pairs: usize,
    pub positive_rate: f64,
    /// Weights of entity cluster sizes 1, 2, ..; for two-table tasks each
    /// entity draws its left and right copy counts independently.
    pub cluster_sizes: Vec<f64>,
    /// Tuples per side that belong to no matched entity, used only as
    /// non-match endpoints. `None` means as many as there are positives.
    pub unmatched_tuples: Option<usize>,
    pub lfs: Vec<LfSpec>,
    pub duplicates: Vec<DuplicateSpec>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config("positive_rate must lie in (0, 1)".into()));
        }
        if self.cluster_sizes.is_empty() || self.cluster_sizes.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("cluster_sizes needs non-negative weights".into()));
        }
        if self.cluster_sizes.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("cluster_sizes weights sum to zero".into()));
        }
        if self.task_kind == TaskKind::SingleTable && self.cluster_sizes.len() < 2 {
            return Err(Error::Config("single-table clusters need sizes of at least 2".into()));
        }
        for lf in &self.lfs {
            if !(lf.accuracy > 0.5 && lf.accuracy <= 1.0) {
                return Err(Error::Config(format!("LF accuracy {} outside (0.5, 1]", lf.accuracy)));
            }
            if !(lf.abstain >= 0.0 && lf.abstain < 1.0) {
                return Err(Error::Config(format!("LF abstain rate {} outside [0, 1)", lf.abstain)));
            }
        }
        for d in &self.duplicates {
            if d.target >= self.lfs.len() || d.source >= self.lfs.len() || d.target == d.source {
                return Err(Error::Config(format!("bad duplicate {} <- {}", d.target, d.source)));
            }
            if !(0.0..=1.0).contains(&d.flip) {
                return Err(Error::Config("duplicate flip rate outside [0, 1]".into()));
            }
        }
        if self.lfs.is_empty() {
            return Err(Error::Config("at least one LF is required".into()));
        }
        Ok(())
    }
}

fn draw_size(rng: &mut ChaCha8Rng, weights: &[f64], min: usize) -> usize {
    let total: f64 = weights.iter().skip(min - 1).sum();
    let mut u = rng.gen::<f64>() * total;
    for (s, &w) in weights.iter().enumerate().skip(min - 1) {
        if u < w {
            return s + 1;
        }
        u -= w;
    }
    weights.len()
}

/// Candidate pairs with their true labels and the entity behind each tuple.
fn sample_pairs(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(PairId, Label)> {
    let n_pos = (0..spec.n_pairs).filter(|_| rng.gen_bool(spec.positive_rate)).count();
    let n_neg = spec.n_pairs - n_pos;
    let extra = spec.unmatched_tuples.unwrap_or(n_pos.max(2));
    let mut out: Vec<(PairId, Label)> = Vec::with_capacity(spec.n_pairs);
    let mut seen = HashSet::new();
    match spec.task_kind {
        TaskKind::TwoTable => {
            // (tuple id, entity); unmatched tuples get unique entities
            let (mut left, mut right): (Vec<(String, usize)>, Vec<(String, usize)>) = (Vec::new(), Vec::new());
            let mut entity = 0;
            while out.len() < n_pos {
                let a = draw_size(rng, &spec.cluster_sizes, 1);
                let b = draw_size(rng, &spec.cluster_sizes, 1);
                let ls: Vec<String> = (0..a).map(|k| format!("l{}", left.len() + k)).collect();
                let rs: Vec<String> = (0..b).map(|k| format!("r{}", right.len() + k)).collect();
                left.extend(ls.iter().map(|l| (l.clone(), entity)));
                right.extend(rs.iter().map(|r| (r.clone(), entity)));
                for l in &ls {
                    for r in &rs {
                        if out.len() < n_pos {
                            let p = PairId::two_table(l.as_str(), r.as_str());
                            seen.insert(p.clone());
                            out.push((p, Label::Match));
                        }
                    }
                }
                entity += 1;
            }
            for k in 0..extra {
                left.push((format!("l{}", left.len()), entity + 2 * k));
                right.push((format!("r{}", right.len()), entity + 2 * k + 1));
            }
            let capacity = left.len() * right.len() - n_pos;
            let n_neg = n_neg.min(capacity);
            while out.len() < n_pos + n_neg {
                let (l, el) = &left[rng.gen_range(0..left.len())];
                let (r, er) = &right[rng.gen_range(0..right.len())];
                if el == er {
                    continue;
                }
                let p = PairId::two_table(l.as_str(), r.as_str());
                if seen.insert(p.clone()) {
                    out.push((p, Label::NonMatch));
                }
            }
        }
        TaskKind::SingleTable => {
            let mut tuples: Vec<(String, usize)> = Vec::new();
            let mut entity = 0;
            while out.len() < n_pos {
                let s = draw_size(rng, &spec.cluster_sizes, 2);
                let ids: Vec<String> = (0..s).map(|k| format!("t{}", tuples.len() + k)).collect();
                tuples.extend(ids.iter().map(|t| (t.clone(), entity)));
                for x in 0..s {
                    for y in x + 1..s {
                        if out.len() < n_pos {
                            let p = PairId::single_table(ids[x].as_str(), ids[y].as_str()).expect("distinct ids");
                            seen.insert(p.clone());
                            out.push((p, Label::Match));
                        }
                    }
                }
                entity += 1;
            }
            for k in 0..extra.max(2) {
                tuples.push((format!("t{}", tuples.len()), entity + k));
            }
            let t = tuples.len();
            let capacity = t * (t - 1) / 2 - n_pos;
            let n_neg = n_neg.min(capacity);
            while out.len() < n_pos + n_neg {
                let (a, ea) = &tuples[rng.gen_range(0..t)];
                let (b, eb) = &tuples[rng.gen_range(0..t)];
                if ea == eb {
                    continue;
                }
                let p = PairId::single_table(a.as_str(), b.as_str()).expect("distinct ids");
                if seen.insert(p.clone()) {
                    out.push((p, Label::NonMatch));
                }
            }
        }
    }
    out.shuffle(rng);
    out
}

fn lf_column(lf: &LfSpec, truth: &[Label], rng: &mut ChaCha8Rng) -> Vec<i8> {
    truth
        .iter()
        .map(|y| {
            if rng.gen_bool(lf.abstain) {
                0
            } else if rng.gen_bool(lf.accuracy) {
                y.as_vote()
            } else {
                -y.as_vote()
            }
        })
        .collect()
}

/// Samples entities, candidate pairs and LF votes. Every LF uses its own
/// random stream, so adding an LF leaves the others unchanged.
pub fn gen_synth(spec: &SynthSpec) -> Result<(LabelingMatrix, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = sample_pairs(spec, &mut rng);
    let truth: Vec<Label> = pairs.iter().map(|p| p.1).collect();
    let mut columns: Vec<Vec<i8>> = spec
        .lfs
        .iter()
        .enumerate()
        .map(|(j, lf)| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(j as u64 + 1);
            lf_column(lf, &truth, &mut r)
        })
        .collect();
    for (k, d) in spec.duplicates.iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream((spec.lfs.len() + k) as u64 + 1);
        columns[d.target] = columns[d.source]
            .iter()
            .map(|&v| if v != 0 && r.gen_bool(d.flip) { -v } else { v })
            .collect();
    }
    let m = columns.len();
    let mut votes = Vec::with_capacity(pairs.len() * m);
    for i in 0..pairs.len() {
        votes.extend(columns.iter().map(|c| c[i]));
    }
    let gt: HashMap<PairId, Label> = pairs.iter().cloned().collect();
    let set = Arc::new(PairSet::new(spec.task_kind, pairs.into_iter().map(|p| p.0).collect())?);
    let names = (0..m).map(|j| format!("lf{j}")).collect();
    Ok((LabelingMatrix::new(set, names, votes)?, GroundTruth::new(gt, false)))
}

pub const ASSIGNMENT_ORACLE_CAP: usize = 7;
pub const GAMMA_ORACLE_CAP: usize = 6;

/// Minimum total cost over every way of matching each row of the smaller
/// side to a distinct column, by exhaustive permutation.
pub fn oracle_assignment(costs: &[Vec<f64>]) -> Result<f64> {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    if costs.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("ragged cost matrix".into()));
    }
    let size = rows.max(cols);
    if size > ASSIGNMENT_ORACLE_CAP {
        return Err(Error::OracleCap {
            size,
            cap: ASSIGNMENT_ORACLE_CAP,
        });
    }
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    // permute the larger side; the first `small` positions are the matches
    let transpose = rows > cols;
    let cost = |a: usize, b: usize| if transpose { costs[b][a] } else { costs[a][b] };
    let small = rows.min(cols);
    let mut perm: Vec<usize> = (0..size).collect();
    let mut best = f64::INFINITY;
    let mut visit = |p: &[usize]| {
        let s: f64 = (0..small).map(|a| cost(a, p[a])).sum();
        best = best.min(s);
    };
    // Heap's algorithm
    let mut c = vec![0usize; size];
    visit(&perm);
    let mut i = 0;
    while i < size {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleGamma {
    pub gamma: Vec<Vec<f64>>,
    /// `alpha * violations + divergence` at `gamma`.
    pub loss: f64,
    pub violations: f64,
}

const ORACLE_EPS: f64 = 1e-6;
const ORACLE_ALPHA: f64 = 100.0;
const ORACLE_FEASIBLE: f64 = 1e-3;

fn oracle_violations(n: usize, u: &[f64], idx: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                if p == q || p == r || q == r {
                    continue;
                }
                let excess = u[idx[p][q]] * u[idx[p][r]] - u[idx[q][r]];
                if excess > 0.0 {
                    total += excess;
                }
            }
        }
    }
    total
}

fn oracle_divergence(star: &[f64], u: &[f64]) -> f64 {
    star.iter()
        .zip(u)
        .map(|(&s, &v)| {
            let s = s.clamp(ORACLE_EPS, 1.0 - ORACLE_EPS);
            let v = v.clamp(ORACLE_EPS, 1.0 - ORACLE_EPS);
            2.0 * (v * (v / s).ln() + (1.0 - v) * ((1.0 - v) / (1.0 - s)).ln())
        })
        .sum()
}

/// Penalized minimization on a tiny symmetric matrix by pattern search from
/// many starts, tightening the penalty until the best point is feasible.
/// Moves shrink geometrically from 0.25 down to `grid_step`.
pub fn oracle_constrained_gamma(g_star: &[Vec<f64>], grid_step: f64, seed: u64) -> Result<OracleGamma> {
    let n = g_star.len();
    if n > GAMMA_ORACLE_CAP {
        return Err(Error::OracleCap {
            size: n,
            cap: GAMMA_ORACLE_CAP,
        });
    }
    if g_star.iter().any(|r| r.len() != n) {
        return Err(Error::Config("oracle input must be square".into()));
    }
    if !(grid_step > 0.0 && grid_step < 0.25) {
        return Err(Error::Config("grid_step must lie in (0, 0.25)".into()));
    }
    let mut idx = vec![vec![0usize; n]; n];
    let mut star = Vec::new();
    for p in 0..n {
        for q in p + 1..n {
            idx[p][q] = star.len();
            idx[q][p] = star.len();
            star.push(g_star[p][q]);
        }
    }
    let score = |u: &[f64], alpha: f64| alpha * oracle_violations(n, u, &idx) + oracle_divergence(&star, u);

    let vars = star.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = vec![star.clone()];
    for v in 0..vars {
        let mut s = star.clone();
        s[v] = 0.0;
        starts.push(s.clone());
        s[v] = 1.0;
        starts.push(s);
    }
    for _ in 0..24 {
        starts.push((0..vars).map(|_| rng.gen::<f64>()).collect());
    }

    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for start in starts {
        let mut u = start;
        for alpha in [ORACLE_ALPHA, 1e3, 1e4, 1e5] {
            let mut step = 0.25;
            let mut cur = score(&u, alpha);
            while step >= grid_step * 0.999 {
                let mut improved = true;
                while improved {
                    improved = false;
                    for v in 0..vars {
                        for dir in [1.0, -1.0] {
                            let old = u[v];
                            u[v] = (old + dir * step).clamp(0.0, 1.0);
                            let s = score(&u, alpha);
                            if s < cur - 1e-15 {
                                cur = s;
                                improved = true;
                            } else {
                                u[v] = old;
                            }
                        }
                    }
                }
                step *= 0.5;
            }
            let viol = oracle_violations(n, &u, &idx);
            if viol <= ORACLE_FEASIBLE {
                let loss = score(&u, ORACLE_ALPHA);
                if best.as_ref().is_none_or(|b| loss < b.1) {
                    best = Some((u.clone(), loss, viol));
                }
                break;
            }
        }
    }
    let (u, loss, violations) = best.ok_or_else(|| Error::Numerical("oracle found no feasible point".into()))?;
    let mut gamma = vec![vec![1.0; n]; n];
    for p in 0..n {
        for q in 0..n {
            if p != q {
                gamma[p][q] = u[idx[p][q]];
            }
        }
    }
    Ok(OracleGamma { gamma, loss, violations })
}

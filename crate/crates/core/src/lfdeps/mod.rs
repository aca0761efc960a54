//! Dependency detection between labeling functions from the overlap of
//! their mistakes.
//!
//! Every LF is split into a positive part (its +1 votes) and a negative part
//! (its -1 votes). Two parts of the same polarity are tested under a null
//! model in which the first LF places some confident votes on true matches
//! and the rest at random, after which the second does the same
//! independently. Hidden confident-vote counts are fitted by maximum
//! likelihood and the observed number of shared mistakes is compared with
//! its null distribution.

mod graph;
mod stats;

use serde::{Deserialize, Serialize};

pub use graph::{
    find_chordless_cycle, infer_dependency_graph, infer_dependency_graph_with, write_dependency_report, DepConfig, DepEdge, DependencyGraph,
    PairTest,
};
pub use stats::{estimate_hidden, hypergeometric_log_pmf, log_binomial, log_likelihood, overlap_test};

use crate::data::{Label, LabelingMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn vote(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLf {
    pub source_lf: usize,
    pub name: String,
    pub polarity: Polarity,
    /// Either 0 or the polarity's vote.
    pub votes: Vec<i8>,
}

impl SplitLf {
    pub fn n_votes(&self) -> usize {
        self.votes.iter().filter(|&&v| v != 0).count()
    }
}

/// Positive then negative part of every LF, dropping empty parts.
pub fn split_lfs(x: &LabelingMatrix) -> Vec<SplitLf> {
    let mut out = Vec::with_capacity(2 * x.n_lfs());
    for (j, name) in x.lf_names().iter().enumerate() {
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let votes: Vec<i8> = x.column(j).map(|v| if v == polarity.vote() { v } else { 0 }).collect();
            if votes.iter().any(|&v| v != 0) {
                out.push(SplitLf {
                    source_lf: j,
                    name: name.clone(),
                    polarity,
                    votes,
                });
            }
        }
    }
    out
}

/// Observed cell counts for an ordered pair of same-polarity parts. A
/// "vote" is a non-abstain vote of the part and "hit" means the inferred
/// label agrees with the polarity; negative parts are handled by negating
/// both votes and labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyCounts {
    /// Indexed `[first votes][second votes][hit]`.
    pub cells: [[[u64; 2]; 2]; 2],
}

impl DependencyCounts {
    pub fn cell(&self, first: bool, second: bool, hit: bool) -> u64 {
        self.cells[first as usize][second as usize][hit as usize]
    }

    pub fn n_pos(&self) -> u64 {
        self.sum(|_, _, h| h)
    }

    pub fn n_neg(&self) -> u64 {
        self.sum(|_, _, h| !h)
    }

    pub fn n1(&self) -> u64 {
        self.sum(|a, _, _| a)
    }

    pub fn n2(&self) -> u64 {
        self.sum(|_, b, _| b)
    }

    /// Both parts vote against the inferred label.
    pub fn mistake_overlap(&self) -> u64 {
        self.cell(true, true, false)
    }

    fn sum(&self, keep: impl Fn(bool, bool, bool) -> bool) -> u64 {
        let mut total = 0;
        for a in [false, true] {
            for b in [false, true] {
                for h in [false, true] {
                    if keep(a, b, h) {
                        total += self.cell(a, b, h);
                    }
                }
            }
        }
        total
    }
}

pub fn counts_table(first: &SplitLf, second: &SplitLf, y_hat: &[Label]) -> Result<DependencyCounts> {
    if first.polarity != second.polarity {
        return Err(Error::Config(
            "parts of opposite polarity never share a mistake and are not tested".into(),
        ));
    }
    if first.votes.len() != y_hat.len() || second.votes.len() != y_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: y_hat.len(),
            got: first.votes.len().min(second.votes.len()),
        });
    }
    let target = first.polarity.vote();
    let mut cells = [[[0u64; 2]; 2]; 2];
    for ((&a, &b), y) in first.votes.iter().zip(&second.votes).zip(y_hat) {
        cells[(a != 0) as usize][(b != 0) as usize][(y.as_vote() == target) as usize] += 1;
    }
    Ok(DependencyCounts { cells })
}

/// Fitted hidden counts. `t1` confident votes of the first part; the second
/// part's confident votes split into `t21` on the first's confident votes,
/// `t22` on its random correct votes and `t23` where the first abstains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenVoteEstimate {
    pub t1: u64,
    pub t21: u64,
    pub t22: u64,
    pub t23: u64,
    pub effective_z25: f64,
    pub effective_n_neg: f64,
    pub log_likelihood: f64,
}

//! Exact transitivity for two-table tasks with duplicate-free tables.

mod assignment;
mod graph;

pub use assignment::{
    solve_assignment, solve_assignment_with, Assignment, AssignmentInstance, MatchingMode,
};
pub use graph::{build_match_graph, check_feasibility, PairGraph, Violation};

use crate::data::{ProbAssignment, TableSide, TaskKind};
use crate::{Error, Result};

const DELTA_F_EPS: f64 = 1e-6;

/// Objective decrease from keeping a pair at `gamma` instead of zeroing it:
/// `ln(1 / (1 - gamma))`, with gamma capped at `1 - 1e-6`.
pub fn delta_f(gamma: f64) -> f64 {
    let g = gamma.clamp(0.0, 1.0 - DELTA_F_EPS);
    -(-g).ln_1p()
}

fn require_two_table(gamma: &ProbAssignment) -> Result<()> {
    match gamma.pair_set().kind() {
        TaskKind::TwoTable => Ok(()),
        TaskKind::SingleTable => Err(Error::ModeMismatch {
            mode: "exact transitivity".into(),
            task: TaskKind::SingleTable.to_string(),
        }),
    }
}

/// With `dupfree_side` duplicate-free, every tuple of the other side keeps
/// only its highest-probability partner (ties go to the smaller id).
pub fn enforce_one_side_dupfree(gamma: &ProbAssignment, dupfree_side: TableSide) -> Result<ProbAssignment> {
    require_two_table(gamma)?;
    if dupfree_side == TableSide::Single {
        return Err(Error::Config("duplicate-free side must be left or right".into()));
    }
    let index = gamma.pair_set().tuples();
    let probs = gamma.probs();
    // per tuple of the non-dup-free side: (best pair, partner tuple index)
    let mut best: Vec<Option<(usize, usize)>> = vec![None; index.len()];
    for (p, &(l, r)) in index.endpoints().iter().enumerate() {
        let (owner, partner) = if dupfree_side == TableSide::Left { (r, l) } else { (l, r) };
        let better = match best[owner] {
            None => true,
            Some((q, other)) => probs[p] > probs[q] || (probs[p] == probs[q] && partner < other),
        };
        if better {
            best[owner] = Some((p, partner));
        }
    }
    let mut out = vec![0.0; probs.len()];
    for &(p, _) in best.iter().flatten() {
        out[p] = probs[p];
    }
    Ok(ProbAssignment::from_parts_unchecked(gamma.pair_set().clone(), out))
}

/// With both sides duplicate-free, keeps the partial matching of candidate
/// pairs with the largest total `delta_f` and zeroes the rest.
pub fn enforce_two_side_dupfree(gamma: &ProbAssignment) -> Result<ProbAssignment> {
    require_two_table(gamma)?;
    let index = gamma.pair_set().tuples();
    let n_left = index.count_side(TableSide::Left);
    let probs = gamma.probs();
    let mut edge_pair = std::collections::HashMap::new();
    let mut instance = AssignmentInstance {
        n_left,
        n_right: index.len() - n_left,
        edges: Vec::new(),
    };
    // left tuples sort before right tuples in the tuple index
    for (p, &(l, r)) in index.endpoints().iter().enumerate() {
        let gain = delta_f(probs[p]);
        if gain > 0.0 {
            instance.edges.push((l, r - n_left, -gain));
            edge_pair.insert((l, r - n_left), p);
        }
    }
    let matching = solve_assignment_with(&instance, MatchingMode::MaxWeight)?;
    let mut out = vec![0.0; probs.len()];
    for m in &matching.matched {
        let p = edge_pair[m];
        out[p] = probs[p];
    }
    Ok(ProbAssignment::from_parts_unchecked(gamma.pair_set().clone(), out))
}

#[cfg(test)]
mod tests;

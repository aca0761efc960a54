use serde::{Deserialize, Serialize};

use crate::data::{majority_vote, LabelingMatrix, ProbAssignment};

/// Pseudo-count added to every confusion cell, only to keep logs finite.
pub const DS_SMOOTHING: f64 = 1e-6;

const PRIOR_CLAMP: f64 = 1e-6;

/// Per LF, `p[j][c][v]` is P(vote v | class c) with classes (non-match,
/// match) and votes indexed -1, 0, +1 as 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub p: Vec<[[f64; 3]; 2]>,
    pub prior: f64,
}

fn vote_index(v: i8) -> usize {
    (v + 1) as usize
}

fn m_step(x: &LabelingMatrix, gamma: &[f64]) -> ConfusionModel {
    let m = x.n_lfs();
    let mut counts = vec![[[DS_SMOOTHING; 3]; 2]; m];
    for (i, &g) in gamma.iter().enumerate() {
        for (j, &v) in x.row(i).iter().enumerate() {
            counts[j][0][vote_index(v)] += 1.0 - g;
            counts[j][1][vote_index(v)] += g;
        }
    }
    for table in &mut counts {
        for row in table.iter_mut() {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|c| *c /= total);
        }
    }
    let prior = if gamma.is_empty() {
        0.5
    } else {
        gamma.iter().sum::<f64>() / gamma.len() as f64
    };
    ConfusionModel {
        p: counts,
        prior: prior.clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP),
    }
}

fn e_step(x: &LabelingMatrix, model: &ConfusionModel) -> Vec<f64> {
    let base = model.prior.ln() - (1.0 - model.prior).ln();
    (0..x.n_pairs())
        .map(|i| {
            let row = x.row(i);
            if row.iter().all(|&v| v == 0) {
                return model.prior;
            }
            let logit: f64 = base
                + row
                    .iter()
                    .zip(&model.p)
                    .map(|(&v, t)| t[1][vote_index(v)].ln() - t[0][vote_index(v)].ln())
                    .sum::<f64>();
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}

/// EM over per-LF confusion tables with abstain as a third symbol. Rows
/// where every LF abstains carry no evidence and get the class prior.
pub fn dawid_skene(x: &LabelingMatrix, max_iterations: usize, tol: f64) -> ProbAssignment {
    dawid_skene_model(x, max_iterations, tol).0
}

pub fn dawid_skene_model(x: &LabelingMatrix, max_iterations: usize, tol: f64) -> (ProbAssignment, ConfusionModel) {
    let mut gamma = majority_vote(x).probs().to_vec();
    let mut model = m_step(x, &gamma);
    for _ in 0..max_iterations {
        let next = e_step(x, &model);
        let delta = gamma
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gamma = next;
        model = m_step(x, &gamma);
        if delta < tol {
            break;
        }
    }
    (
        ProbAssignment::from_parts_unchecked(x.pair_set().clone(), gamma),
        model,
    )
}

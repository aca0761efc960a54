//! Stratified k-fold selection of `(d_max, ccp_alpha)`.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tree::Presorted;
use super::{fit_trees, predict_trees, ForestHyperParams};
use crate::data::Label;

pub const DEFAULT_FOLDS: usize = 5;

/// `d_max` in {1, 2, 3, 5, 8} crossed with `ccp_alpha` in {0, 1e-4, 1e-3, 1e-2}.
pub fn default_grid() -> Vec<(usize, f64)> {
    let mut grid = Vec::new();
    for d in [1, 2, 3, 5, 8] {
        for a in [0.0, 1e-4, 1e-3, 1e-2] {
            grid.push((d, a));
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best: ForestHyperParams,
    /// Mean fold accuracy per grid point, in grid order. Empty when too few
    /// minority rows made cross validation impossible.
    pub scores: Vec<f64>,
    pub folds_used: usize,
}

fn lower_capacity(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 > b.1)
}

fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00C0_FFEE_F01D);
    let mut fold = vec![0; labels.len()];
    for class in [Label::NonMatch, Label::Match] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

pub fn cross_validate(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    grid: &[(usize, f64)],
    folds: usize,
    base: &ForestHyperParams,
) -> ForestHyperParams {
    cross_validate_scores(features, labels, grid, folds, base).best
}

/// Scores every grid point by mean held-out accuracy. Each fold grows one
/// forest to the deepest grid depth; shallower points are obtained by
/// truncation, which matches growing them directly because node randomness
/// is keyed by node position.
pub fn cross_validate_scores(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    grid: &[(usize, f64)],
    folds: usize,
    base: &ForestHyperParams,
) -> CvOutcome {
    assert!(!grid.is_empty(), "cross validation grid is empty");
    let lowest = grid
        .iter()
        .copied()
        .reduce(|best, g| if lower_capacity(g, best) { g } else { best })
        .unwrap();
    let n_pos = labels.iter().filter(|l| l.is_match()).count();
    let minority = n_pos.min(labels.len() - n_pos);
    let k = folds.min(minority);
    if grid.len() == 1 || k < 2 {
        let pick = if grid.len() == 1 { grid[0] } else { lowest };
        return CvOutcome {
            best: base.with_capacity(pick.0, pick.1),
            scores: Vec::new(),
            folds_used: 0,
        };
    }

    let assignment = stratified_folds(labels, k, base.seed);
    let data = Presorted::new(features, labels);
    let grow_depth = grid.iter().map(|g| g.0).max().unwrap();
    let mut scores = vec![0.0; grid.len()];
    for f in 0..k {
        let train: Vec<u32> = (0..labels.len() as u32)
            .filter(|&i| assignment[i as usize] != f)
            .collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
        let test_x = features.select(Axis(0), &test);
        let grown = fit_trees(&data, &train, base, grow_depth);
        for (g, &(d, a)) in grid.iter().enumerate() {
            let trees: Vec<_> = grown.iter().map(|t| t.finalize(d, a)).collect();
            let probs = predict_trees(&trees, test_x.view());
            let hits = test
                .iter()
                .zip(&probs)
                .filter(|(&i, &p)| Label::from_prob(p) == labels[i])
                .count();
            scores[g] += hits as f64 / test.len() as f64 / k as f64;
        }
    }
    let mut best = 0;
    for g in 1..grid.len() {
        let diff = scores[g] - scores[best];
        if diff > 1e-12 || (diff.abs() <= 1e-12 && lower_capacity(grid[g], grid[best])) {
            best = g;
        }
    }
    CvOutcome {
        best: base.with_capacity(grid[best].0, grid[best].1),
        scores,
        folds_used: k,
    }
}

//! Learned transitivity for single-table tasks.

mod eigen;
mod gen;
mod infer;
mod matrix;
mod net;
mod train;

pub use eigen::{jacobi_eigen, spectral_features, Spectral};
pub use gen::{
    gen_dataset, gen_training_pair, greedy_projection, pair_rng, read_dataset, sample_star,
    solve_constrained, write_dataset, GenReport, Solver, TrainGenConfig, TrainingPair,
    FEASIBLE_TOL,
};
pub use infer::{apply_transitivity_ml, MlStats, NEIGHBOUR_SAMPLES, SAMPLE_REPEATS};
pub use matrix::{
    h1, max_product_closure, penalized_loss, permute, swap, transitivity_loss, ProbMatrix32,
    CLAMP_EPS, N, N_UPPER,
};
pub use net::{Layer, NetDims, TransitivityNet};
pub use train::{train_net, training_gradient, training_loss, Cell, TrainConfig, TrainReport};

/// Forward pass on the spectral features of a matrix: rows 0 and 1 form
/// the target pair.
pub fn net_forward(net: &TransitivityNet, spectral: &Spectral) -> f64 {
    net.forward(spectral)
}

/// Prediction for cell `(i, j)`. Moving tuples `i`, `j` into slots 0 and 1
/// permutes the rows of the eigenvector matrix the same way, so the
/// decomposition of `g` is reused and rows `i`, `j` form the target group.
/// Symmetric in `i` and `j` by construction.
pub fn predict_pair(net: &TransitivityNet, g: &ProbMatrix32, i: usize, j: usize) -> f64 {
    assert!(i != j && i < N && j < N, "predict_pair needs two distinct slots");
    let spectral = spectral_features(g);
    let emb = net.embed(&spectral);
    net::sigmoid(net.pooled_logit(&emb, &spectral.values, i, j))
}

/// Predictions for every listed cell, sharing one decomposition.
pub fn predict_cells(net: &TransitivityNet, g: &ProbMatrix32, cells: &[(usize, usize)]) -> Vec<f64> {
    let spectral = spectral_features(g);
    let emb = net.embed(&spectral);
    cells
        .iter()
        .map(|&(i, j)| net::sigmoid(net.pooled_logit(&emb, &spectral.values, i, j)))
        .collect()
}

#[cfg(test)]
mod tests;

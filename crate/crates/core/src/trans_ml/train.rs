//! Supervised training of the transitivity network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eigen::{spectral_features, Spectral};
use super::gen::TrainingPair;
use super::matrix::N;
use super::net::{pooled_input_with_argmax, sigmoid, NetDims, TransitivityNet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dims: NetDims,
    pub epochs: usize,
    pub lr: f64,
    /// Matrices per optimizer step.
    pub batch_matrices: usize,
    /// Cells sampled from each matrix per epoch.
    pub cells_per_matrix: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: NetDims::default(),
            epochs: 40,
            lr: 3e-3,
            batch_matrices: 8,
            cells_per_matrix: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared error on the monitoring sample before training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// `(matrix index, i, j)` with `i < j`.
pub type Cell = (usize, usize, usize);

struct Prepared {
    spectral: Vec<Spectral>,
    targets: Vec<Vec<f64>>,
}

impl Prepared {
    fn new(data: &[TrainingPair]) -> Self {
        Prepared {
            spectral: data.iter().map(|p| spectral_features(&p.star)).collect(),
            targets: data.iter().map(|p| p.target.rows().to_vec()).collect(),
        }
    }
}

fn all_cells() -> Vec<(usize, usize)> {
    (0..N).flat_map(|i| (i + 1..N).map(move |j| (i, j))).collect()
}

/// Mean squared error and its gradient over `cells`, grouped by matrix.
fn loss_and_grad(net: &TransitivityNet, prep: &Prepared, cells: &[Cell], want_grad: bool) -> (f64, Option<TransitivityNet>) {
    let mut grad = want_grad.then(|| TransitivityNet::zeros(net.dims().clone()));
    let scale = 1.0 / cells.len() as f64;
    let mut total = 0.0;
    let mut start = 0;
    while start < cells.len() {
        let m = cells[start].0;
        let mut end = start;
        while end < cells.len() && cells[end].0 == m {
            end += 1;
        }
        let spectral = &prep.spectral[m];
        let traces: Vec<_> = (0..N).map(|r| net.encode_row(spectral.row(r))).collect();
        let emb: Vec<Vec<f64>> = traces.iter().map(|t| t.acts.last().unwrap().clone()).collect();
        let dim = emb[0].len();
        let mut demb = vec![vec![0.0; dim]; N];
        for &(_, i, j) in &cells[start..end] {
            let (input, arg) = pooled_input_with_argmax(&emb, &spectral.values, i, j);
            let trace = net.head_forward(input);
            let p = sigmoid(trace.logit);
            let y = prep.targets[m][i * N + j];
            total += (p - y) * (p - y) * scale;
            if let Some(g) = grad.as_mut() {
                let dlogit = 2.0 * (p - y) * p * (1.0 - p) * scale;
                let dinput = net.head_backward(&trace, dlogit, g);
                for d in 0..dim {
                    let winner = if emb[i][d] >= emb[j][d] { i } else { j };
                    demb[winner][d] += dinput[d];
                    demb[arg[d]][d] += dinput[dim + d];
                }
            }
        }
        if let Some(g) = grad.as_mut() {
            for r in 0..N {
                if demb[r].iter().any(|&v| v != 0.0) {
                    net.encoder_backward(&traces[r], &demb[r], g);
                }
            }
        }
        start = end;
    }
    (total, grad)
}

/// Mean squared error of the network on `data` over `cells`
/// (`(matrix, i, j)`, grouped by matrix).
pub fn training_loss(net: &TransitivityNet, data: &[TrainingPair], cells: &[Cell]) -> f64 {
    loss_and_grad(net, &Prepared::new(data), cells, false).0
}

/// Analytic gradient of [`training_loss`] in the order of
/// [`TransitivityNet::flat_params`].
pub fn training_gradient(net: &TransitivityNet, data: &[TrainingPair], cells: &[Cell]) -> (f64, Vec<f64>) {
    let (loss, grad) = loss_and_grad(net, &Prepared::new(data), cells, true);
    (loss, grad.expect("gradient requested").flat_params())
}

fn monitor_cells(n_matrices: usize, rng: &mut ChaCha8Rng) -> Vec<Cell> {
    let all = all_cells();
    let mut cells = Vec::new();
    for m in 0..n_matrices.min(256) {
        for &(i, j) in all.choose_multiple(rng, 32) {
            cells.push((m, i, j));
        }
    }
    cells
}

/// Adam on mean squared error between predictions and `gamma**` cells.
/// Weights are rounded to f32 precision on return so the in-memory model
/// equals the saved one.
pub fn train_net(data: &[TrainingPair], cfg: &TrainConfig) -> Result<(TransitivityNet, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_matrices == 0 || cfg.cells_per_matrix == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("bad training configuration".into()));
    }
    let prep = Prepared::new(data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = TransitivityNet::random(cfg.dims.clone(), &mut rng);
    let monitor = monitor_cells(data.len(), &mut rng);
    let initial_loss = loss_and_grad(&net, &prep, &monitor, false).0;

    let mut params = net.flat_params();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let (b1, b2) = (0.9f64, 0.999f64);
    let mut step = 0i32;
    let all = all_cells();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * data.len().div_ceil(cfg.batch_matrices);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_matrices) {
            let mut cells = Vec::with_capacity(batch.len() * cfg.cells_per_matrix);
            for &m in batch {
                for &(i, j) in all.choose_multiple(&mut rng, cfg.cells_per_matrix.min(all.len())) {
                    cells.push((m, i, j));
                }
            }
            let (loss, grad) = loss_and_grad(&net, &prep, &cells, true);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("training loss became {loss} at step {step}")));
            }
            let g = grad.unwrap().flat_params();
            step += 1;
            let progress = f64::from(step) / total_steps as f64;
            let rate = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for k in 0..params.len() {
                m1[k] = b1 * m1[k] + (1.0 - b1) * g[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * g[k] * g[k];
                params[k] -= rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + 1e-8);
            }
            net.set_flat_params(&params);
        }
        let epoch_loss = loss_and_grad(&net, &prep, &monitor, false).0;
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical("training loss became non-finite".into()));
        }
        epoch_losses.push(epoch_loss);
    }
    net.round_to_f32();
    if !net.is_finite() {
        return Err(Error::Numerical("trained weights are non-finite".into()));
    }
    let final_loss = loss_and_grad(&net, &prep, &monitor, false).0;
    Ok((
        net,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

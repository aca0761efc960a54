//! SMOTE oversampling of the minority class.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k_neighbors: 5,
            seed: 0,
        }
    }
}

fn sq_dist(a: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(a.row(j))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Grows the minority class to the majority size. The original rows come
/// first and unchanged; synthetics follow. Returns the input as-is when a
/// class is missing or the classes are already balanced.
pub fn smote(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    cfg: &SmoteConfig,
) -> (Array2<f64>, Vec<Label>) {
    let n_pos = labels.iter().filter(|l| l.is_match()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || n_pos == n_neg {
        return (features.to_owned(), labels.to_vec());
    }
    let minority_label = if n_pos < n_neg {
        Label::Match
    } else {
        Label::NonMatch
    };
    let minority: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == minority_label)
        .collect();
    let deficit = n_pos.abs_diff(n_neg);
    let k = cfg.k_neighbors.max(1).min(minority.len() - 1);
    let m = features.ncols();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut neighbours: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut synth = Array2::zeros((deficit, m));
    for mut row in synth.outer_iter_mut() {
        let base = rng.gen_range(0..minority.len());
        let xi = features.row(minority[base]);
        if k == 0 {
            row.assign(&xi);
            continue;
        }
        let nn = neighbours.entry(base).or_insert_with(|| {
            let mut cand: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&o| o != base)
                .map(|o| (sq_dist(features, minority[base], minority[o]), o))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.into_iter().map(|(_, o)| o).collect()
        });
        let xj = features.row(minority[nn[rng.gen_range(0..nn.len())]]);
        let u: f64 = rng.gen();
        for c in 0..m {
            row[c] = xi[c] + u * (xj[c] - xi[c]);
        }
    }
    let out = ndarray::concatenate(Axis(0), &[features, synth.view()]).expect("same width");
    let mut out_labels = labels.to_vec();
    out_labels.extend(std::iter::repeat_n(minority_label, deficit));
    (out, out_labels)
}

//! Random forest with depth limiting and cost-complexity pruning.

mod cv;
mod tree;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, cross_validate_scores, default_grid, CvOutcome, DEFAULT_FOLDS};
pub use tree::{DecisionTree, Node};

use crate::data::Label;
use crate::{Error, Result};
use tree::{tree_seed, GrownTree, Presorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// `ceil(sqrt(m))` candidate features per node.
    SqrtCeil,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyperParams {
    pub d_max: usize,
    pub ccp_alpha: f64,
    pub n_trees: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyperParams {
    fn default() -> Self {
        ForestHyperParams {
            d_max: 3,
            ccp_alpha: 0.0,
            n_trees: 100,
            feature_subsample: FeatureSubsample::SqrtCeil,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 {
            return Err(Error::Config("d_max must be at least 1".into()));
        }
        if !(self.ccp_alpha >= 0.0) {
            return Err(Error::Config("ccp_alpha must be non-negative".into()));
        }
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_capacity(&self, d_max: usize, ccp_alpha: f64) -> Self {
        ForestHyperParams {
            d_max,
            ccp_alpha,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    n_features: usize,
}

impl ForestModel {
    pub fn from_trees(trees: Vec<DecisionTree>) -> Result<Self> {
        let n_features = trees
            .first()
            .map(DecisionTree::n_features)
            .ok_or_else(|| Error::Config("a forest needs at least one tree".into()))?;
        if let Some(t) = trees.iter().find(|t| t.n_features() != n_features) {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                got: t.n_features(),
            });
        }
        Ok(ForestModel { trees, n_features })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

fn row_indices(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

/// Fits one tree on `features`/`labels`. `stream` selects the tree's random
/// substream, so `fit_tree(.., i)` is tree `i` of `fit_forest`.
pub fn fit_tree(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    params: &ForestHyperParams,
    stream: usize,
) -> DecisionTree {
    let data = Presorted::new(features, labels);
    let rows = row_indices(data.n_rows());
    GrownTree::grow(&data, &rows, params, tree_seed(params.seed, stream))
        .finalize(params.d_max, params.ccp_alpha)
}

pub fn fit_forest(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    params: &ForestHyperParams,
) -> Result<ForestModel> {
    params.validate()?;
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            got: labels.len(),
        });
    }
    let data = Presorted::new(features, labels);
    let rows = row_indices(data.n_rows());
    let trees = fit_trees(&data, &rows, params, params.d_max)
        .into_iter()
        .map(|g| g.finalize(params.d_max, params.ccp_alpha))
        .collect();
    Ok(ForestModel {
        trees,
        n_features: features.ncols(),
    })
}

pub(crate) fn fit_trees(
    data: &Presorted,
    rows: &[u32],
    params: &ForestHyperParams,
    grow_depth: usize,
) -> Vec<GrownTree> {
    let grow_params = params.with_capacity(grow_depth, 0.0);
    (0..params.n_trees)
        .into_par_iter()
        .map(|i| GrownTree::grow(data, rows, &grow_params, tree_seed(params.seed, i)))
        .collect()
}

/// Mean over trees of the positive-class fraction at the reached leaf.
pub fn predict_proba(model: &ForestModel, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if features.ncols() != model.n_features {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            got: features.ncols(),
        });
    }
    Ok(predict_trees(&model.trees, features))
}

pub(crate) fn predict_trees(trees: &[DecisionTree], features: ArrayView2<'_, f64>) -> Vec<f64> {
    let n_trees = trees.len() as f64;
    features
        .outer_iter()
        .map(|row| {
            let row = row.to_vec();
            let total: f64 = trees.iter().map(|t| t.predict_row(&row)).sum();
            (total / n_trees).clamp(0.0, 1.0)
        })
        .collect()
}

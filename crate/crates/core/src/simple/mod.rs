//! The classifier-based EM loop, its transitivity-constrained variant, and
//! the majority vote and Dawid-Skene baselines.

mod dawid_skene;

use log::{debug, info};
use serde::{Deserialize, Serialize};

pub use dawid_skene::{dawid_skene, dawid_skene_model, ConfusionModel, DS_SMOOTHING};

use crate::data::{majority_vote, LabelingMatrix, ProbAssignment, TableSide, TaskKind};
use crate::dupfree::{detect_dupfree, DetectConfig, DupFreeReport};
use crate::forest::{cross_validate_scores, default_grid, fit_forest, predict_proba, ForestHyperParams, DEFAULT_FOLDS};
use crate::imbalance::{smote, SmoteConfig};
use crate::trans_exact::{enforce_one_side_dupfree, enforce_two_side_dupfree};
use crate::trans_ml::{apply_transitivity_ml, TransitivityNet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitivityMode {
    None,
    /// The left table is duplicate-free: each right tuple keeps one partner.
    ExactOneSideLeft,
    ExactOneSideRight,
    ExactTwoSide,
    LearnedSingleTable,
    Auto,
}

impl TransitivityMode {
    pub fn is_exact(self) -> bool {
        matches!(
            self,
            TransitivityMode::ExactOneSideLeft | TransitivityMode::ExactOneSideRight | TransitivityMode::ExactTwoSide
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub convergence_flip_fraction: f64,
    pub prob_clamp_epsilon: f64,
    pub transitivity_mode: TransitivityMode,
    pub seed: u64,
    pub forest: ForestHyperParams,
    pub cv_folds: usize,
    pub smote_neighbors: usize,
    pub dupfree: DetectConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 10,
            convergence_flip_fraction: 0.001,
            prob_clamp_epsilon: 1e-6,
            transitivity_mode: TransitivityMode::None,
            seed: 0,
            forest: ForestHyperParams::default(),
            cv_folds: DEFAULT_FOLDS,
            smote_neighbors: SmoteConfig::default().k_neighbors,
            dupfree: DetectConfig::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_flip_fraction > 0.0 && self.convergence_flip_fraction < 1.0) {
            return Err(Error::Config("convergence_flip_fraction must lie in (0, 1)".into()));
        }
        if !(self.prob_clamp_epsilon > 0.0 && self.prob_clamp_epsilon < 0.5) {
            return Err(Error::Config("prob_clamp_epsilon must lie in (0, 0.5)".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        self.forest.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub flip_fraction: f64,
    pub d_max: usize,
    pub ccp_alpha: f64,
    pub smote_added: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    pub gamma: ProbAssignment,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// The enforcement actually used; differs from the configured one only
    /// in auto mode.
    pub resolved_mode: TransitivityMode,
    /// Left then right test, when auto mode ran detection.
    pub dupfree: Option<(DupFreeReport, DupFreeReport)>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_mode(mode: TransitivityMode, kind: TaskKind, net: Option<&TransitivityNet>) -> Result<()> {
    let mismatch = || Error::ModeMismatch {
        mode: format!("{mode:?}"),
        task: kind.to_string(),
    };
    match mode {
        m if m.is_exact() && kind != TaskKind::TwoTable => Err(mismatch()),
        TransitivityMode::LearnedSingleTable if kind != TaskKind::SingleTable => Err(mismatch()),
        TransitivityMode::LearnedSingleTable if net.is_none() => Err(Error::MissingNetwork("learned transitivity needs a network".into())),
        _ => Ok(()),
    }
}

/// The E-step post-transform for one iteration.
fn enforce(
    gamma: ProbAssignment,
    mode: TransitivityMode,
    net: Option<&TransitivityNet>,
    seed: u64,
) -> Result<ProbAssignment> {
    match mode {
        TransitivityMode::None | TransitivityMode::Auto => Ok(gamma),
        TransitivityMode::ExactOneSideLeft => enforce_one_side_dupfree(&gamma, TableSide::Left),
        TransitivityMode::ExactOneSideRight => enforce_one_side_dupfree(&gamma, TableSide::Right),
        TransitivityMode::ExactTwoSide => enforce_two_side_dupfree(&gamma),
        TransitivityMode::LearnedSingleTable => {
            let net = net.ok_or_else(|| Error::MissingNetwork("learned transitivity needs a network".into()))?;
            Ok(apply_transitivity_ml(&gamma, net, seed)?.0)
        }
    }
}

/// Clamps into `[eps, 1 - eps]`. Under exact enforcement the pairs zeroed
/// by the constraint stay at zero, since lifting them to `eps` would
/// reintroduce violations.
fn finalize(gamma: &ProbAssignment, eps: f64, mode: TransitivityMode) -> ProbAssignment {
    if !mode.is_exact() {
        return gamma.clamped(eps);
    }
    let probs = gamma
        .probs()
        .iter()
        .map(|&p| if p == 0.0 { 0.0 } else { p.clamp(eps, 1.0 - eps) })
        .collect();
    ProbAssignment::from_parts_unchecked(gamma.pair_set().clone(), probs)
}

fn run_loop(
    x: &LabelingMatrix,
    cfg: &EmConfig,
    mode: TransitivityMode,
    net: Option<&TransitivityNet>,
) -> Result<(ProbAssignment, Vec<IterationRecord>, bool)> {
    let features = x.to_features();
    let n = x.n_pairs();
    let grid = default_grid();
    let smote_cfg = SmoteConfig {
        k_neighbors: cfg.smote_neighbors,
        seed: mix(cfg.seed, 1),
    };
    let base = ForestHyperParams {
        seed: mix(cfg.seed, 2),
        ..cfg.forest.clone()
    };
    let mut gamma = majority_vote(x);
    let mut labels = gamma.labels();
    let mut records = Vec::new();
    let mut converged = false;
    for it in 1..=cfg.max_iterations {
        let (aug_x, aug_y) = smote(features.view(), &labels, &smote_cfg);
        let cv = cross_validate_scores(aug_x.view(), &aug_y, &grid, cfg.cv_folds, &base);
        let model = fit_forest(aug_x.view(), &aug_y, &cv.best)?;
        let probs = predict_proba(&model, features.view())?;
        let raw = ProbAssignment::from_parts_unchecked(x.pair_set().clone(), probs);
        gamma = enforce(raw, mode, net, mix(cfg.seed, 3 + it as u64))?;
        let new_labels = gamma.labels();
        let flips = labels.iter().zip(&new_labels).filter(|(a, b)| a != b).count();
        let flip_fraction = if n == 0 { 0.0 } else { flips as f64 / n as f64 };
        debug!(
            "iteration {it}: flip fraction {flip_fraction:.6}, d_max {}, ccp_alpha {}",
            cv.best.d_max, cv.best.ccp_alpha
        );
        records.push(IterationRecord {
            iteration: it,
            flip_fraction,
            d_max: cv.best.d_max,
            ccp_alpha: cv.best.ccp_alpha,
            smote_added: aug_y.len() - n,
        });
        labels = new_labels;
        if flip_fraction < cfg.convergence_flip_fraction {
            converged = true;
            break;
        }
    }
    Ok((finalize(&gamma, cfg.prob_clamp_epsilon, mode), records, converged))
}

/// The unconstrained loop. `transitivity_mode` is ignored.
pub fn simple_infer(x: &LabelingMatrix, cfg: &EmConfig) -> Result<ProbAssignment> {
    Ok(simple_infer_traced(x, cfg)?.gamma)
}

pub fn simple_infer_traced(x: &LabelingMatrix, cfg: &EmConfig) -> Result<EmOutcome> {
    cfg.validate()?;
    let (gamma, iterations, converged) = run_loop(x, cfg, TransitivityMode::None, None)?;
    Ok(EmOutcome {
        gamma,
        iterations,
        converged,
        resolved_mode: TransitivityMode::None,
        dupfree: None,
    })
}

pub fn simple_em_infer(
    x: &LabelingMatrix,
    cfg: &EmConfig,
    dupfree_hints: Option<(bool, bool)>,
    net: Option<&TransitivityNet>,
) -> Result<ProbAssignment> {
    Ok(simple_em_infer_traced(x, cfg, dupfree_hints, net)?.gamma)
}

/// Auto mode picks the enforcement from `dupfree_hints` (left, right) when
/// given, otherwise from detection on an unconstrained pass. A single-table
/// task without a network falls back to no enforcement.
pub fn simple_em_infer_traced(
    x: &LabelingMatrix,
    cfg: &EmConfig,
    dupfree_hints: Option<(bool, bool)>,
    net: Option<&TransitivityNet>,
) -> Result<EmOutcome> {
    cfg.validate()?;
    let kind = x.task_kind();
    let mode = cfg.transitivity_mode;
    check_mode(mode, kind, net)?;
    if mode != TransitivityMode::Auto {
        let (gamma, iterations, converged) = run_loop(x, cfg, mode, net)?;
        return Ok(EmOutcome {
            gamma,
            iterations,
            converged,
            resolved_mode: mode,
            dupfree: None,
        });
    }

    let mut reports = None;
    let resolved = match kind {
        TaskKind::SingleTable if net.is_some() => TransitivityMode::LearnedSingleTable,
        TaskKind::SingleTable => {
            info!("auto mode on a single-table task without a network: no enforcement");
            TransitivityMode::None
        }
        TaskKind::TwoTable => {
            let flags = match dupfree_hints {
                Some(h) => Some(h),
                None => {
                    let first = simple_infer(x, cfg)?;
                    let det = DetectConfig {
                        seed: mix(cfg.seed, 4),
                        ..cfg.dupfree
                    };
                    reports = detect_dupfree(&first, &det)?;
                    reports.as_ref().map(|(l, r)| (l.dupfree(), r.dupfree()))
                }
            };
            match flags {
                Some((true, true)) => TransitivityMode::ExactTwoSide,
                Some((true, false)) => TransitivityMode::ExactOneSideLeft,
                Some((false, true)) => TransitivityMode::ExactOneSideRight,
                _ => TransitivityMode::None,
            }
        }
    };
    info!("auto mode resolved to {resolved:?}");
    let (gamma, iterations, converged) = run_loop(x, cfg, resolved, net)?;
    Ok(EmOutcome {
        gamma,
        iterations,
        converged,
        resolved_mode: resolved,
        dupfree: reports,
    })
}

#[cfg(test)]
mod tests;

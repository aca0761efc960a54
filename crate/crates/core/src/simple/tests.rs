use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{f1, PairId, PairSet};
use crate::harness::{gen_synth, DuplicateSpec, LfSpec, SynthSpec};
use crate::trans_exact::{check_feasibility, PairGraph};
use crate::trans_ml::NetDims;

fn quick() -> EmConfig {
    EmConfig {
        forest: ForestHyperParams {
            n_trees: 20,
            ..ForestHyperParams::default()
        },
        ..EmConfig::default()
    }
}

fn synth(kind: TaskKind, n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        task_kind: kind,
        n_pairs: n,
        positive_rate: 0.2,
        cluster_sizes: if kind == TaskKind::TwoTable { vec![1.0] } else { vec![0.0, 1.0] },
        unmatched_tuples: None,
        lfs: [0.9, 0.8, 0.75, 0.7]
            .iter()
            .map(|&a| LfSpec { accuracy: a, abstain: 0.3 })
            .collect(),
        duplicates: vec![],
        seed,
    }
}

fn matrix(kind: TaskKind, rows: &[(&str, &str, &[i8])]) -> LabelingMatrix {
    let pairs = rows.iter().map(|(a, b, _)| PairId::new(kind, a, b).unwrap()).collect();
    let set = Arc::new(PairSet::new(kind, pairs).unwrap());
    let m = rows[0].2.len();
    let votes = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
    LabelingMatrix::new(set, (0..m).map(|j| format!("lf{j}")).collect(), votes).unwrap()
}

#[test]
fn unanimous_votes_are_reproduced_in_one_iteration() {
    let rows: Vec<(String, String, Vec<i8>)> = (0..40)
        .map(|i| {
            let v = if i % 4 == 0 { 1 } else { -1 };
            (format!("l{i}"), format!("r{i}"), vec![v; 3])
        })
        .collect();
    let rows: Vec<(&str, &str, &[i8])> = rows.iter().map(|(a, b, v)| (a.as_str(), b.as_str(), v.as_slice())).collect();
    let x = matrix(TaskKind::TwoTable, &rows);
    let cfg = EmConfig {
        max_iterations: 1,
        ..quick()
    };
    let out = simple_infer(&x, &cfg).unwrap();
    for (i, &p) in out.probs().iter().enumerate() {
        assert_eq!(p > 0.5, x.vote(i, 0) == 1, "row {i}: {p}");
    }
}

#[test]
fn none_mode_is_identical_to_simple_infer() {
    let (x, _) = gen_synth(&synth(TaskKind::TwoTable, 300, 3)).unwrap();
    let cfg = quick();
    let a = simple_infer(&x, &cfg).unwrap();
    let b = simple_em_infer(&x, &cfg, None, None).unwrap();
    assert_eq!(a.probs(), b.probs());
}

#[test]
fn loop_is_bounded_clamped_and_deterministic() {
    let (x, gt) = gen_synth(&synth(TaskKind::TwoTable, 400, 8)).unwrap();
    let cfg = EmConfig {
        prob_clamp_epsilon: 1e-3,
        ..quick()
    };
    let a = simple_infer_traced(&x, &cfg).unwrap();
    let b = simple_infer_traced(&x, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.iterations.len() <= cfg.max_iterations);
    assert!(a.gamma.probs().iter().all(|p| (1e-3..=1.0 - 1e-3).contains(p)));
    assert_eq!(a.converged, a.iterations.last().unwrap().flip_fraction < 0.001);
    let score = f1(&a.gamma, &gt).unwrap().f1;
    assert!(score > 0.7, "f1 {score}");
}

#[test]
fn single_class_labels_do_not_abort() {
    let x = matrix(
        TaskKind::TwoTable,
        &[("a", "x", &[-1, -1]), ("b", "y", &[-1, 0]), ("c", "z", &[0, -1])],
    );
    let out = simple_infer(&x, &quick()).unwrap();
    assert!(out.probs().iter().all(|&p| p < 0.5));
}

#[test]
fn e_step_keeps_the_stronger_competitor() {
    let set = Arc::new(
        PairSet::new(
            TaskKind::TwoTable,
            vec![PairId::two_table("l1", "r1"), PairId::two_table("l2", "r1")],
        )
        .unwrap(),
    );
    let gamma = ProbAssignment::new(set, vec![0.8, 0.9]).unwrap();
    let out = enforce(gamma, TransitivityMode::ExactOneSideLeft, None, 0).unwrap();
    assert_eq!(out.probs(), &[0.0, 0.9]);
}

#[test]
fn exact_modes_leave_no_violations() {
    let mut spec = synth(TaskKind::TwoTable, 400, 21);
    spec.cluster_sizes = vec![0.6, 0.4];
    let (x, _) = gen_synth(&spec).unwrap();
    for (mode, zero) in [
        (TransitivityMode::ExactOneSideLeft, vec![TableSide::Left]),
        (TransitivityMode::ExactOneSideRight, vec![TableSide::Right]),
        (TransitivityMode::ExactTwoSide, vec![TableSide::Left, TableSide::Right]),
    ] {
        let cfg = EmConfig {
            transitivity_mode: mode,
            ..quick()
        };
        let out = simple_em_infer(&x, &cfg, None, None).unwrap();
        let mut scope = PairGraph::candidates(&out);
        for s in zero {
            scope = scope.with_zero_same_side(s);
        }
        assert!(check_feasibility(&out, &scope).is_empty(), "{mode:?}");
        assert!(out.probs().iter().all(|&p| p == 0.0 || (1e-6..=1.0 - 1e-6).contains(&p)));
    }
}

#[test]
fn mode_task_mismatches_are_errors() {
    let (two, _) = gen_synth(&synth(TaskKind::TwoTable, 100, 1)).unwrap();
    let (one, _) = gen_synth(&synth(TaskKind::SingleTable, 100, 1)).unwrap();
    let with = |m| EmConfig {
        transitivity_mode: m,
        ..quick()
    };
    let net = TransitivityNet::zeros(NetDims::default());
    assert!(matches!(
        simple_em_infer(&one, &with(TransitivityMode::ExactTwoSide), None, None),
        Err(Error::ModeMismatch { .. })
    ));
    assert!(matches!(
        simple_em_infer(&two, &with(TransitivityMode::LearnedSingleTable), None, Some(&net)),
        Err(Error::ModeMismatch { .. })
    ));
    assert!(matches!(
        simple_em_infer(&one, &with(TransitivityMode::LearnedSingleTable), None, None),
        Err(Error::MissingNetwork(_))
    ));
}

#[test]
fn learned_mode_runs_on_single_table() {
    let (x, _) = gen_synth(&synth(TaskKind::SingleTable, 200, 6)).unwrap();
    let net = TransitivityNet::random(NetDims::default(), &mut ChaCha8Rng::seed_from_u64(1));
    let cfg = EmConfig {
        transitivity_mode: TransitivityMode::LearnedSingleTable,
        max_iterations: 2,
        ..quick()
    };
    let a = simple_em_infer_traced(&x, &cfg, None, Some(&net)).unwrap();
    let b = simple_em_infer_traced(&x, &cfg, None, Some(&net)).unwrap();
    assert_eq!(a, b);
    assert!(a.gamma.probs().iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
}

#[test]
fn auto_mode_follows_detection_and_hints() {
    let (x, _) = gen_synth(&synth(TaskKind::TwoTable, 400, 2)).unwrap();
    let cfg = EmConfig {
        transitivity_mode: TransitivityMode::Auto,
        ..quick()
    };
    let out = simple_em_infer_traced(&x, &cfg, None, None).unwrap();
    assert_eq!(out.resolved_mode, TransitivityMode::ExactTwoSide);
    let (l, r) = out.dupfree.unwrap();
    assert!(l.dupfree() && r.dupfree());

    let mut heavy = synth(TaskKind::TwoTable, 400, 2);
    heavy.cluster_sizes = vec![0.0, 0.0, 0.0, 1.0];
    heavy.lfs = vec![LfSpec { accuracy: 0.95, abstain: 0.1 }; 4];
    let (x, _) = gen_synth(&heavy).unwrap();
    let out = simple_em_infer_traced(&x, &cfg, None, None).unwrap();
    assert_eq!(out.resolved_mode, TransitivityMode::None);

    let hinted = simple_em_infer_traced(&x, &cfg, Some((false, true)), None).unwrap();
    assert_eq!(hinted.resolved_mode, TransitivityMode::ExactOneSideRight);
    assert!(hinted.dupfree.is_none());
}

#[test]
fn dawid_skene_single_lf_fixed_point() {
    let x = matrix(
        TaskKind::TwoTable,
        &[("a", "x", &[1]), ("b", "y", &[-1]), ("c", "z", &[-1]), ("d", "w", &[0]), ("e", "v", &[1])],
    );
    let (gamma, model) = dawid_skene_model(&x, 100, 1e-9);
    let p = gamma.probs();
    assert!(p[0] > 0.95 && p[4] > 0.95, "{p:?} {model:?}");
    assert!(p[1] < 0.05 && p[2] < 0.05);
    assert!((p[3] - model.prior).abs() < 1e-12);
    for table in &model.p {
        for row in table {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    assert!(model.prior > 0.0 && model.prior < 1.0);
}

#[test]
fn dawid_skene_is_competitive_with_majority_vote() {
    for seed in 0..3 {
        let mut spec = synth(TaskKind::TwoTable, 1000, seed);
        spec.lfs = [0.9, 0.85, 0.8, 0.7, 0.65]
            .iter()
            .map(|&a| LfSpec { accuracy: a, abstain: 0.3 })
            .collect();
        spec.duplicates = vec![];
        let (x, gt) = gen_synth(&spec).unwrap();
        let ds = f1(&dawid_skene(&x, 100, 1e-6), &gt).unwrap().f1;
        let mv = f1(&majority_vote(&x), &gt).unwrap().f1;
        assert!(ds >= mv - 0.02, "seed {seed}: ds {ds} mv {mv}");
    }
    let _ = DuplicateSpec { target: 1, source: 0, flip: 0.0 };
}

#[test]
fn invalid_config_is_rejected() {
    let (x, _) = gen_synth(&synth(TaskKind::TwoTable, 50, 1)).unwrap();
    for bad in [
        EmConfig { max_iterations: 0, ..quick() },
        EmConfig { convergence_flip_fraction: 1.0, ..quick() },
        EmConfig { prob_clamp_epsilon: 0.5, ..quick() },
    ] {
        assert!(matches!(simple_infer(&x, &bad), Err(Error::Config(_))));
    }
}

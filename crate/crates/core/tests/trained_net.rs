//! Quality of a network trained on a desk-scale generated dataset.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use simplem::data::{PairId, PairSet, ProbAssignment, TaskKind};
use simplem::harness::oracle_constrained_gamma;
use simplem::trans_ml::{
    apply_transitivity_ml, gen_dataset, predict_pair, train_net, TrainConfig, TrainGenConfig, TrainingPair, TransitivityNet,
};

const TRAIN: usize = 400;
const HELD_OUT: usize = 80;

fn held_out_mae(net: &TransitivityNet, data: &[TrainingPair]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in data {
        for (i, j) in [(0, 1), (0, 2), (1, 2), (3, 7), (5, 30), (10, 11), (20, 31)] {
            total += (predict_pair(net, &p.star, i, j) - p.target.get(i, j)).abs();
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn trained_network_quality() {
    let t = Instant::now();
    let gen = TrainGenConfig {
        matrix_count: TRAIN + HELD_OUT,
        seed: 2024,
        ..TrainGenConfig::default()
    };
    let reports = gen_dataset(&gen).unwrap();
    eprintln!("generated in {:?}", t.elapsed());
    let pairs: Vec<TrainingPair> = reports.iter().map(|r| r.pair.clone()).collect();
    let (train, test) = pairs.split_at(TRAIN);
    let t = Instant::now();
    let (net, report) = train_net(train, &TrainConfig { seed: 1, ..TrainConfig::default() }).unwrap();
    eprintln!("trained in {:?}: {} -> {}", t.elapsed(), report.initial_loss, report.final_loss);
    assert!(report.final_loss < report.initial_loss);

    let mae = held_out_mae(&net, test);
    eprintln!("held-out mae {mae:.4}");
    assert!(mae <= 0.1, "held-out MAE {mae}");

    // feasible targets fed back as inputs should map to themselves
    let identity: Vec<TrainingPair> = test
        .iter()
        .map(|p| TrainingPair {
            star: p.target.clone(),
            target: p.target.clone(),
        })
        .collect();
    let im = held_out_mae(&net, &identity);
    eprintln!("identity-region mae {im:.4}");
    assert!(im <= 0.1, "identity-region MAE {im}");

    // three tuples with one violated triple, padded with dummy tuples
    let oracle = oracle_constrained_gamma(
        &[vec![1.0, 0.9, 0.9], vec![0.9, 1.0, 0.5], vec![0.9, 0.5, 1.0]],
        1e-3,
        0,
    )
    .unwrap();
    assert!(oracle.gamma[1][2] > 0.5, "oracle {:?}", oracle.gamma);
    let pairs = vec![
        PairId::single_table("a", "b").unwrap(),
        PairId::single_table("a", "c").unwrap(),
        PairId::single_table("b", "c").unwrap(),
    ];
    let set = Arc::new(PairSet::new(TaskKind::SingleTable, pairs.clone()).unwrap());
    let gamma = ProbAssignment::new(set, vec![0.9, 0.9, 0.5]).unwrap();
    let (out, _) = apply_transitivity_ml(&gamma, &net, 0).unwrap();
    let got: HashMap<_, _> = pairs.iter().cloned().zip(out.probs().iter().copied()).collect();
    let bc = got[&pairs[2]];
    eprintln!("net bc {bc:.4} oracle bc {:.4}", oracle.gamma[1][2]);
    assert!(bc > 0.5, "rewritten value {bc}");
}

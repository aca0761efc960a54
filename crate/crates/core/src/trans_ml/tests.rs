use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{PairId, PairSet, ProbAssignment, TaskKind};
use crate::trans_exact::{check_feasibility, PairGraph};

fn random_symmetric(rng: &mut ChaCha8Rng) -> ProbMatrix32 {
    let mut m = ProbMatrix32::identity();
    for i in 0..N {
        for j in i + 1..N {
            m.set(i, j, rng.gen());
        }
    }
    m
}

fn small_net(seed: u64) -> TransitivityNet {
    TransitivityNet::random(
        NetDims {
            encoder: vec![6, 5],
            head: vec![7],
        },
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

#[test]
fn loss_examples() {
    let mut block = ProbMatrix32::identity();
    for i in 0..5 {
        for j in i + 1..5 {
            block.set(i, j, 1.0);
        }
    }
    assert_eq!(transitivity_loss(&block), 0.0);

    let mut ones = ProbMatrix32::identity();
    for i in 0..N {
        for j in i + 1..N {
            ones.set(i, j, 1.0);
        }
    }
    assert_eq!(transitivity_loss(&ones), 0.0);

    let mut g = ProbMatrix32::identity();
    g.set(0, 1, 0.9);
    g.set(0, 2, 0.9);
    g.set(1, 2, 0.5);
    // brute force over ordered triples of the 3x3 principal submatrix
    let mut expected = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                if i != j && j != k && i != k {
                    expected += (g.get(i, j) * g.get(i, k) - g.get(j, k)).max(0.0);
                }
            }
        }
    }
    assert_relative_eq!(expected, 0.62, epsilon = 1e-12);
    assert_relative_eq!(transitivity_loss(&g), expected, epsilon = 1e-12);
}

#[test]
fn swap_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_symmetric(&mut rng);
    assert_eq!(swap(&g, 0, 1, 0, 1), g);
    let s = swap(&g, 0, 1, 2, 3);
    assert_eq!(s.get(0, 1), g.get(2, 3));
    assert_eq!(swap(&s, 0, 1, 2, 3), g);
}

#[test]
fn spectral_examples() {
    let id = spectral_features(&ProbMatrix32::identity());
    assert!(id.values.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    for c in 0..N {
        let col: Vec<f64> = (0..N).map(|r| id.row(r)[c]).collect();
        assert_eq!(col.iter().filter(|v| v.abs() == 1.0).count(), 1);
        assert_eq!(col.iter().filter(|v| **v == 0.0).count(), N - 1);
    }

    let mut block = ProbMatrix32::identity();
    block.set(0, 1, 1.0);
    let s = spectral_features(&block);
    assert_relative_eq!(s.values[0], 2.0, epsilon = 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let g = random_symmetric(&mut rng);
        let s = spectral_features(&g);
        assert!(s.reconstruction_error(&g) <= 1e-8);
        assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn zero_net_outputs_half() {
    let net = TransitivityNet::zeros(NetDims::default());
    let s = spectral_features(&ProbMatrix32::identity());
    assert_eq!(net_forward(&net, &s), 0.5);
}

fn permute_rows(s: &Spectral, perm: &[usize]) -> Spectral {
    let mut vectors = vec![0.0; N * N];
    for (new, &old) in perm.iter().enumerate() {
        vectors[new * N..(new + 1) * N].copy_from_slice(s.row(old));
    }
    Spectral {
        vectors,
        values: s.values.clone(),
    }
}

#[test]
fn forward_is_invariant_within_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = TransitivityNet::random(NetDims::default(), &mut rng);
    for _ in 0..100 {
        let s = spectral_features(&random_symmetric(&mut rng));
        let base = net_forward(&net, &s);
        let mut perm: Vec<usize> = (0..N).collect();
        perm[2..].shuffle(&mut rng);
        if rng.gen_bool(0.5) {
            perm.swap(0, 1);
        }
        assert!((net_forward(&net, &permute_rows(&s, &perm)) - base).abs() <= 1e-12);
    }
}

#[test]
fn predict_pair_identity_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = TransitivityNet::random(NetDims::default(), &mut rng);
    let g = random_symmetric(&mut rng);
    assert_eq!(predict_pair(&net, &g, 0, 1), net_forward(&net, &spectral_features(&g)));
    for _ in 0..20 {
        let i = rng.gen_range(0..N);
        let j = (i + rng.gen_range(1..N)) % N;
        assert_eq!(predict_pair(&net, &g, i, j), predict_pair(&net, &g, j, i));
    }
}

#[test]
fn predict_pair_tracks_row_moves() {
    // swapping the target into slot (0, 1) and decomposing again agrees
    // with reusing the decomposition when the spectrum is simple
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = TransitivityNet::random(NetDims::default(), &mut rng);
    let g = random_symmetric(&mut rng);
    for (i, j) in [(2, 3), (5, 0), (1, 7), (31, 30)] {
        let mut perm: [usize; N] = std::array::from_fn(|x| x);
        let (a, b) = (perm.iter().position(|&x| x == i).unwrap(), 0);
        perm.swap(a, b);
        let c = perm.iter().position(|&x| x == j).unwrap();
        perm.swap(c, 1);
        let moved = permute(&g, &perm);
        assert_eq!(moved.get(0, 1), g.get(i, j));
        let direct = net_forward(&net, &spectral_features(&moved));
        assert!((predict_pair(&net, &g, i, j) - direct).abs() < 1e-9);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = TrainGenConfig::default();
    let data: Vec<TrainingPair> = (0..2)
        .map(|_| {
            let star = sample_star(&mut rng, &cfg);
            let target = max_product_closure(&star);
            TrainingPair { star, target }
        })
        .collect();
    let cells: Vec<Cell> = vec![(0, 0, 1), (0, 3, 9), (0, 2, 31), (1, 4, 5), (1, 0, 17)];
    for seed in 0..3 {
        let mut net = small_net(seed);
        let (_, analytic) = training_gradient(&net, &data, &cells);
        let base = net.flat_params();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            net.set_flat_params(&p);
            let up = training_loss(&net, &data, &cells);
            p[k] = base[k] - h;
            net.set_flat_params(&p);
            let down = training_loss(&net, &data, &cells);
            net.set_flat_params(&base);
            let numeric = (up - down) / (2.0 * h);
            let denom = numeric.abs().max(analytic[k].abs()).max(1e-7);
            assert!(
                (numeric - analytic[k]).abs() / denom <= 1e-4,
                "param {k}: numeric {numeric} analytic {}",
                analytic[k]
            );
        }
    }
}

#[test]
fn model_file_round_trip() {
    let mut net = TransitivityNet::random(NetDims::default(), &mut ChaCha8Rng::seed_from_u64(2));
    net.round_to_f32();
    let mut bytes = Vec::new();
    net.save(&mut bytes).unwrap();
    assert_eq!(TransitivityNet::load(&bytes[..]).unwrap(), net);
    assert!(TransitivityNet::load(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(TransitivityNet::load(&bad[..]).is_err());
}

#[test]
fn dataset_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = TrainGenConfig::default();
    let pairs: Vec<TrainingPair> = (0..3)
        .map(|_| {
            let star = sample_star(&mut rng, &cfg);
            TrainingPair {
                target: max_product_closure(&star),
                star,
            }
        })
        .collect();
    let mut bytes = Vec::new();
    write_dataset(&pairs, &mut bytes).unwrap();
    let back = read_dataset(&bytes[..]).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in pairs.iter().zip(&back) {
        assert!(a.star.max_abs_diff(&b.star) < 1e-7);
        assert!(a.target.max_abs_diff(&b.target) < 1e-7);
    }
}

#[test]
fn feasible_input_is_kept() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let star = max_product_closure(&random_symmetric(&mut rng));
    assert!(transitivity_loss(&star) <= 1e-12);
    let r = solve_constrained(&star, &TrainGenConfig::default());
    assert!(r.pair.target.max_abs_diff(&star) <= 0.05);
}

#[test]
fn single_violated_triple_is_repaired() {
    let mut star = ProbMatrix32::identity();
    star.set(0, 1, 0.9);
    star.set(0, 2, 0.9);
    star.set(1, 2, 0.5);
    let r = solve_constrained(&star, &TrainGenConfig::default());
    assert!(r.transitivity_target <= FEASIBLE_TOL);
    assert!(r.loss_target <= r.loss_star);
    assert!(transitivity_loss(&r.pair.target) <= 1e-3);
}

#[test]
fn generated_pairs_are_feasible_and_improve() {
    let cfg = TrainGenConfig {
        seed: 5,
        ..TrainGenConfig::default()
    };
    for i in 0..6 {
        let r = gen_training_pair(&cfg, i);
        assert!(r.transitivity_target <= FEASIBLE_TOL, "{i}: {r:?}");
        assert!(r.loss_target <= r.loss_star);
        assert_eq!(r, gen_training_pair(&cfg, i));
    }
}

#[test]
fn closure_and_projection_are_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = random_symmetric(&mut rng);
    let c = max_product_closure(&g);
    assert!(transitivity_loss(&c) <= 1e-12);
    for i in 0..N {
        for j in 0..N {
            assert!(c.get(i, j) >= g.get(i, j));
        }
    }
    assert_eq!(transitivity_loss(&greedy_projection(&g)), 0.0);
}

fn clique(g: &ProbMatrix32) -> ProbAssignment {
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for i in 0..N {
        for j in i + 1..N {
            ids.push(PairId::single_table(format!("t{i:02}"), format!("t{j:02}")).unwrap());
            probs.push(g.get(i, j));
        }
    }
    let set = Arc::new(PairSet::new(TaskKind::SingleTable, ids).unwrap());
    ProbAssignment::new(set, probs).unwrap()
}

#[test]
fn loss_agrees_with_feasibility_checker() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in 0..100 {
        let raw = random_symmetric(&mut rng);
        let g = if t % 2 == 0 { max_product_closure(&raw) } else { raw };
        let gamma = clique(&g);
        let violations = check_feasibility(&gamma, &PairGraph::candidates(&gamma));
        assert_eq!(transitivity_loss(&g) == 0.0, violations.is_empty());
        let total: f64 = violations.iter().map(|v| v.magnitude).sum();
        assert_relative_eq!(2.0 * total, transitivity_loss(&g), epsilon = 1e-9);
    }
}

fn single(pairs: &[(String, String, f64)]) -> ProbAssignment {
    let ids = pairs
        .iter()
        .map(|(a, b, _)| PairId::single_table(a.clone(), b.clone()).unwrap())
        .collect();
    let set = Arc::new(PairSet::new(TaskKind::SingleTable, ids).unwrap());
    ProbAssignment::new(set, pairs.iter().map(|p| p.2).collect()).unwrap()
}

#[test]
fn singleton_components_are_untouched() {
    let net = small_net(1);
    let gamma = single(&[
        ("a".into(), "b".into(), 0.3),
        ("b".into(), "c".into(), 0.5),
    ]);
    let (out, stats) = apply_transitivity_ml(&gamma, &net, 0).unwrap();
    assert_eq!(out, gamma);
    assert_eq!(stats.rewritten_pairs, 0);
}

#[test]
fn large_component_averages_ten_evaluations() {
    let net = small_net(2);
    let mut pairs = Vec::new();
    for i in 0..39 {
        pairs.push((format!("t{i:02}"), format!("t{:02}", i + 1), 0.8));
    }
    pairs.push(("t00".into(), "t05".into(), 0.2));
    pairs.push(("x".into(), "y".into(), 0.4));
    let gamma = single(&pairs);
    let (out, stats) = apply_transitivity_ml(&gamma, &net, 3).unwrap();
    assert_eq!(stats.large_components, 1);
    assert_eq!(stats.evaluations_per_large_pair, vec![SAMPLE_REPEATS]);
    assert_eq!(stats.rewritten_pairs, 40);
    assert_eq!(stats.net_evaluations, 40 * SAMPLE_REPEATS);
    assert_eq!(out.probs()[40], 0.4);
    assert_eq!(apply_transitivity_ml(&gamma, &net, 3).unwrap().0, out);
}

#[test]
fn small_component_is_rewritten_in_place() {
    let net = small_net(3);
    let gamma = single(&[
        ("a".into(), "b".into(), 0.9),
        ("a".into(), "c".into(), 0.9),
        ("b".into(), "c".into(), 0.5),
        ("d".into(), "e".into(), 0.1),
    ]);
    let (out, stats) = apply_transitivity_ml(&gamma, &net, 0).unwrap();
    assert_eq!(stats.small_components, 1);
    assert_eq!(stats.rewritten_pairs, 3);
    let mut m = ProbMatrix32::identity();
    m.set(0, 1, 0.9);
    m.set(0, 2, 0.9);
    m.set(1, 2, 0.5);
    assert_eq!(out.probs()[2], predict_pair(&net, &m, 1, 2));
    assert_eq!(out.probs()[3], 0.1);
}

#[test]
fn two_table_input_is_rejected() {
    let set = Arc::new(PairSet::new(TaskKind::TwoTable, vec![PairId::two_table("l", "r")]).unwrap());
    let gamma = ProbAssignment::new(set, vec![0.9]).unwrap();
    assert!(apply_transitivity_ml(&gamma, &small_net(0), 0).is_err());
}

#[test]
fn training_is_deterministic_and_improves() {
    let cfg = TrainGenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<TrainingPair> = (0..6)
        .map(|_| {
            let star = sample_star(&mut rng, &cfg);
            TrainingPair {
                target: max_product_closure(&star),
                star,
            }
        })
        .collect();
    let tc = TrainConfig {
        dims: NetDims {
            encoder: vec![16, 16],
            head: vec![16],
        },
        epochs: 5,
        seed: 4,
        ..TrainConfig::default()
    };
    let (a, ra) = train_net(&data, &tc).unwrap();
    let (b, _) = train_net(&data, &tc).unwrap();
    assert_eq!(a, b);
    assert!(ra.final_loss <= ra.initial_loss);
    assert!(train_net(&[], &tc).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn swap_is_an_involution(seed in any::<u64>(), i in 0usize..N, j in 0usize..N, k in 0usize..N, l in 0usize..N) {
        let g = random_symmetric(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(swap(&swap(&g, i, j, k, l), i, j, k, l).get(0, 0), 1.0);
        let s = swap(&g, i, j, k, l);
        prop_assert!(ProbMatrix32::from_rows(s.rows()).is_ok());
    }

    #[test]
    fn reconstruction_on_random_inputs(seed in any::<u64>()) {
        let g = random_symmetric(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(spectral_features(&g).reconstruction_error(&g) <= 1e-8);
    }
}

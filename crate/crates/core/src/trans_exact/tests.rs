use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::data::{PairId, PairSet, TupleRef};

fn two_table(pairs: &[(&str, &str, f64)]) -> ProbAssignment {
    let ids = pairs.iter().map(|(l, r, _)| PairId::two_table(*l, *r)).collect();
    let set = Arc::new(PairSet::new(TaskKind::TwoTable, ids).unwrap());
    ProbAssignment::new(set, pairs.iter().map(|p| p.2).collect()).unwrap()
}

fn single(pairs: &[(&str, &str, f64)]) -> ProbAssignment {
    let ids = pairs
        .iter()
        .map(|(a, b, _)| PairId::single_table(*a, *b).unwrap())
        .collect();
    let set = Arc::new(PairSet::new(TaskKind::SingleTable, ids).unwrap());
    ProbAssignment::new(set, pairs.iter().map(|p| p.2).collect()).unwrap()
}

fn positive_degrees(g: &ProbAssignment) -> Vec<usize> {
    let index = g.pair_set().tuples();
    let mut deg = vec![0; index.len()];
    for (&(a, b), &p) in index.endpoints().iter().zip(g.probs()) {
        if p > 0.0 {
            deg[a] += 1;
            deg[b] += 1;
        }
    }
    deg
}

#[test]
fn delta_f_closed_forms() {
    assert_eq!(delta_f(0.0), 0.0);
    assert_relative_eq!(delta_f(0.5), std::f64::consts::LN_2, epsilon = 1e-12);
    assert_relative_eq!(delta_f(0.9), 10f64.ln(), epsilon = 1e-12);
    assert!(delta_f(1.0).is_finite());
}

#[test]
fn one_side_keeps_the_stronger_left() {
    let g = two_table(&[("l1", "r1", 0.9), ("l2", "r1", 0.8), ("l2", "r2", 0.3)]);
    let out = enforce_one_side_dupfree(&g, TableSide::Left).unwrap();
    assert_eq!(out.probs(), &[0.9, 0.0, 0.3]);
}

#[test]
fn one_side_inactive_constraint_is_identity() {
    let g = two_table(&[("l1", "r1", 0.9), ("l1", "r2", 0.8), ("l2", "r3", 0.3)]);
    assert_eq!(enforce_one_side_dupfree(&g, TableSide::Left).unwrap(), g);
}

#[test]
fn one_side_tie_keeps_smaller_id() {
    let g = two_table(&[("l2", "r", 0.7), ("l1", "r", 0.7)]);
    let out = enforce_one_side_dupfree(&g, TableSide::Left).unwrap();
    assert_eq!(out.get(&PairId::two_table("l1", "r")), Some(0.7));
    assert_eq!(out.get(&PairId::two_table("l2", "r")), Some(0.0));
}

#[test]
fn one_side_right_dupfree_limits_left_tuples() {
    let g = two_table(&[("l1", "r1", 0.6), ("l1", "r2", 0.9), ("l2", "r1", 0.8)]);
    let out = enforce_one_side_dupfree(&g, TableSide::Right).unwrap();
    assert_eq!(out.probs(), &[0.0, 0.9, 0.8]);
}

#[test]
fn two_side_example_matches_permutation_enumeration() {
    let g = two_table(&[
        ("l1", "r1", 0.9),
        ("l1", "r2", 0.6),
        ("l2", "r1", 0.6),
        ("l2", "r2", 0.8),
    ]);
    let diag = delta_f(0.9) + delta_f(0.8);
    let anti = delta_f(0.6) + delta_f(0.6);
    assert!(diag > anti);
    let out = enforce_two_side_dupfree(&g).unwrap();
    assert_eq!(out.probs(), &[0.9, 0.0, 0.0, 0.8]);
}

#[test]
fn two_side_all_zero_stays_zero() {
    let g = two_table(&[("l1", "r1", 0.0), ("l1", "r2", 0.0), ("l2", "r1", 0.0)]);
    assert_eq!(enforce_two_side_dupfree(&g).unwrap().probs(), &[0.0, 0.0, 0.0]);
}

#[test]
fn exact_modes_reject_single_table() {
    let g = single(&[("a", "b", 0.9)]);
    assert!(matches!(
        enforce_two_side_dupfree(&g),
        Err(Error::ModeMismatch { .. })
    ));
    assert!(enforce_one_side_dupfree(&g, TableSide::Left).is_err());
}

#[test]
fn match_graph_components() {
    let g = single(&[("a", "b", 0.9), ("b", "c", 0.9), ("c", "d", 0.2)]);
    let graph = build_match_graph(&g);
    let c = |id: &str| graph.component_of(&TupleRef::single(id)).unwrap();
    assert_eq!(c("a"), c("b"));
    assert_eq!(c("b"), c("c"));
    assert_ne!(c("c"), c("d"));
    assert_eq!(graph.components().len(), 2);

    let weak = single(&[("a", "b", 0.5), ("b", "c", 0.1)]);
    assert!(build_match_graph(&weak).components().iter().all(|c| c.len() == 1));

    let chain: Vec<(String, String, f64)> = (0..39)
        .map(|i| (format!("t{i:02}"), format!("t{:02}", i + 1), 0.8))
        .collect();
    let chain: Vec<(&str, &str, f64)> = chain.iter().map(|(a, b, g)| (a.as_str(), b.as_str(), *g)).collect();
    let graph = build_match_graph(&single(&chain));
    assert_eq!(graph.components().len(), 1);
    assert_eq!(graph.components()[0].len(), 40);
}

#[test]
fn feasibility_examples() {
    let g = single(&[("i", "j", 0.9), ("i", "k", 0.9), ("j", "k", 0.5)]);
    let v = check_feasibility(&g, &PairGraph::candidates(&g));
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].pivot, TupleRef::single("i"));
    assert_relative_eq!(v[0].magnitude, 0.31, epsilon = 1e-12);

    let g = single(&[("i", "j", 0.5), ("i", "k", 0.5), ("j", "k", 0.25)]);
    assert!(check_feasibility(&g, &PairGraph::candidates(&g)).is_empty());

    let g = single(&[("i", "j", 1.0), ("i", "k", 1.0), ("j", "k", 1.0)]);
    assert!(check_feasibility(&g, &PairGraph::candidates(&g)).is_empty());
}

#[test]
fn feasibility_uses_zero_same_side_pairs() {
    let g = two_table(&[("l", "r1", 0.4), ("l", "r2", 0.4)]);
    let open = PairGraph::candidates(&g);
    assert!(check_feasibility(&g, &open).is_empty());
    let v = check_feasibility(&g, &open.with_zero_same_side(TableSide::Right));
    assert_eq!(v.len(), 1);
    assert_relative_eq!(v[0].magnitude, 0.16, epsilon = 1e-12);
}

fn arb_two_table() -> impl Strategy<Value = ProbAssignment> {
    prop::collection::btree_map((0u8..5, 0u8..5), 0.0f64..1.0, 1..20).prop_map(|m| {
        let pairs: Vec<(String, String, f64)> = m
            .into_iter()
            .map(|((l, r), g)| (format!("l{l}"), format!("r{r}"), g))
            .collect();
        let refs: Vec<(&str, &str, f64)> = pairs.iter().map(|(a, b, g)| (a.as_str(), b.as_str(), *g)).collect();
        two_table(&refs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn one_side_is_argmax_and_feasible(g in arb_two_table(), left in any::<bool>()) {
        let side = if left { TableSide::Left } else { TableSide::Right };
        let out = enforce_one_side_dupfree(&g, side).unwrap();
        let index = g.pair_set().tuples();
        // never increases, and each constrained tuple keeps its maximum
        let mut per_owner: std::collections::HashMap<usize, (f64, f64)> = Default::default();
        for ((&(l, r), &before), &after) in index.endpoints().iter().zip(g.probs()).zip(out.probs()) {
            prop_assert!(after == before || after == 0.0);
            let owner = if left { r } else { l };
            let e = per_owner.entry(owner).or_insert((0.0, 0.0));
            e.0 = e.0.max(before);
            if after > 0.0 {
                prop_assert_eq!(e.1, 0.0);
                e.1 = after;
            }
        }
        for (&owner, &(max_before, kept)) in &per_owner {
            let _ = owner;
            if max_before > 0.0 {
                prop_assert_eq!(kept, max_before);
            }
        }
        let scope = PairGraph::candidates(&out).with_zero_same_side(side);
        prop_assert!(check_feasibility(&out, &scope).is_empty());
    }

    #[test]
    fn two_side_is_partial_matching_and_feasible(g in arb_two_table()) {
        let out = enforce_two_side_dupfree(&g).unwrap();
        prop_assert!(positive_degrees(&out).iter().all(|&d| d <= 1));
        let scope = PairGraph::candidates(&out)
            .with_zero_same_side(TableSide::Left)
            .with_zero_same_side(TableSide::Right);
        prop_assert!(check_feasibility(&out, &scope).is_empty());
    }

    #[test]
    fn components_ignore_edge_order(
        edges in prop::collection::btree_map((0u8..8, 0u8..8), 0.0f64..1.0, 1..20),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut list: Vec<(String, String, f64)> = edges
            .into_iter()
            .filter(|((a, b), _)| a < b)
            .map(|((a, b), g)| (format!("t{a}"), format!("t{b}"), g))
            .collect();
        prop_assume!(!list.is_empty());
        let as_refs = |l: &[(String, String, f64)]| -> Vec<(String, String, f64)> { l.to_vec() };
        let original = as_refs(&list);
        list.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let build = |l: &[(String, String, f64)]| {
            let r: Vec<(&str, &str, f64)> = l.iter().map(|(a, b, g)| (a.as_str(), b.as_str(), *g)).collect();
            let graph = build_match_graph(&single(&r));
            let mut comps: Vec<Vec<TupleRef>> = graph
                .components()
                .iter()
                .map(|c| c.iter().map(|&i| graph.nodes()[i].clone()).collect())
                .collect();
            comps.sort();
            comps
        };
        prop_assert_eq!(build(&original), build(&list));
    }
}

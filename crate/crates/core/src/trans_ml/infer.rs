//! Component-wise application of the learned transitivity network.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eigen::spectral_features;
use super::matrix::{ProbMatrix32, N};
use super::net::TransitivityNet;
use super::predict_cells;
use crate::data::{ProbAssignment, TaskKind};
use crate::trans_exact::build_match_graph;
use crate::{Error, Result};

/// Neighbours sampled around an edge of a component larger than 32.
pub const NEIGHBOUR_SAMPLES: usize = N - 2;
/// Independent neighbour samples averaged per edge.
pub const SAMPLE_REPEATS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MlStats {
    pub small_components: usize,
    pub large_components: usize,
    pub rewritten_pairs: usize,
    pub net_evaluations: usize,
    /// Evaluations per rewritten pair of each large component, in order.
    pub evaluations_per_large_pair: Vec<usize>,
}

/// Rewrites every candidate pair inside a match-graph component with the
/// network's prediction. Components of at most 32 tuples are embedded whole
/// with dummy padding; larger ones are handled per pair by averaging
/// predictions over sampled neighbourhoods.
pub fn apply_transitivity_ml(
    gamma: &ProbAssignment,
    net: &TransitivityNet,
    seed: u64,
) -> Result<(ProbAssignment, MlStats)> {
    if gamma.pair_set().kind() != TaskKind::SingleTable {
        return Err(Error::ModeMismatch {
            mode: "learned transitivity".into(),
            task: gamma.pair_set().kind().to_string(),
        });
    }
    let graph = build_match_graph(gamma);
    let index = gamma.pair_set().tuples();
    let probs = gamma.probs();
    let mut value: HashMap<(usize, usize), f64> = HashMap::with_capacity(probs.len());
    let mut comp_pairs: Vec<Vec<usize>> = vec![Vec::new(); graph.components().len()];
    for (p, &(u, v)) in index.endpoints().iter().enumerate() {
        value.insert((u.min(v), u.max(v)), probs[p]);
        let (cu, cv) = (
            graph.component_of(&index.tuples()[u]).unwrap(),
            graph.component_of(&index.tuples()[v]).unwrap(),
        );
        if cu == cv && graph.components()[cu].len() > 1 {
            comp_pairs[cu].push(p);
        }
    }
    let lookup = |a: usize, b: usize| value.get(&(a.min(b), a.max(b))).copied().unwrap_or(0.0);
    let embed = |members: &[usize]| {
        let mut m = ProbMatrix32::identity();
        for x in 0..members.len() {
            for y in x + 1..members.len() {
                m.set(x, y, lookup(members[x], members[y]));
            }
        }
        m
    };
    let adjacency = graph.adjacency();
    let mut out = probs.to_vec();
    let mut stats = MlStats::default();
    for (c, members) in graph.components().iter().enumerate() {
        if members.len() < 2 || comp_pairs[c].is_empty() {
            continue;
        }
        if members.len() <= N {
            stats.small_components += 1;
            let slot: HashMap<usize, usize> = members.iter().enumerate().map(|(s, &m)| (m, s)).collect();
            let cells: Vec<(usize, usize)> = comp_pairs[c]
                .iter()
                .map(|&p| {
                    let (u, v) = index.endpoints()[p];
                    (slot[&u], slot[&v])
                })
                .collect();
            let preds = predict_cells(net, &embed(members), &cells);
            for (&p, pred) in comp_pairs[c].iter().zip(preds) {
                out[p] = pred;
            }
            stats.net_evaluations += 1;
            stats.rewritten_pairs += cells.len();
        } else {
            stats.large_components += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(members[0] as u64 + 1);
            let mut evaluations = 0;
            for &p in &comp_pairs[c] {
                let (u, v) = index.endpoints()[p];
                let mut pool: Vec<usize> = adjacency[u]
                    .iter()
                    .chain(&adjacency[v])
                    .copied()
                    .filter(|&x| x != u && x != v)
                    .collect();
                pool.sort_unstable();
                pool.dedup();
                let mut total = 0.0;
                for _ in 0..SAMPLE_REPEATS {
                    let mut slots = vec![u, v];
                    slots.extend(pool.choose_multiple(&mut rng, NEIGHBOUR_SAMPLES.min(pool.len())));
                    let spectral = spectral_features(&embed(&slots));
                    total += net.forward(&spectral);
                    evaluations += 1;
                }
                out[p] = total / SAMPLE_REPEATS as f64;
                stats.rewritten_pairs += 1;
            }
            stats.net_evaluations += evaluations;
            stats
                .evaluations_per_large_pair
                .push(evaluations / comp_pairs[c].len());
        }
    }
    Ok((gamma.with_probs(out)?, stats))
}

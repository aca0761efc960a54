//! Duplicate-free table detection from a noisy predicted match set.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{ProbAssignment, TableSide, TaskKind};
use crate::{Error, Result};

/// Which table is under test. Testing the left table counts distinct right
/// tuples among the matches, and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TestLeft,
    TestRight,
}

impl Direction {
    pub fn tested_side(self) -> TableSide {
        match self {
            Direction::TestLeft => TableSide::Left,
            Direction::TestRight => TableSide::Right,
        }
    }

    pub fn counted_side(self) -> TableSide {
        self.tested_side().opposite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DupFreeInput {
    /// `(left id, right id)` of every predicted match.
    pub matches: Vec<(String, String)>,
    pub direction: Direction,
    /// Number of tuples on the counted side.
    pub n_opposite: usize,
    pub c: f64,
    pub sim_repeats: usize,
    pub seed: u64,
}

impl DupFreeInput {
    pub fn new(matches: Vec<(String, String)>, direction: Direction, n_opposite: usize) -> Self {
        DupFreeInput {
            matches,
            direction,
            n_opposite,
            c: 0.05,
            sim_repeats: 1000,
            seed: 0,
        }
    }

    fn counted(&self) -> impl Iterator<Item = &str> {
        self.matches.iter().map(move |(l, r)| match self.direction {
            Direction::TestLeft => r.as_str(),
            Direction::TestRight => l.as_str(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DupFreeReport {
    pub direction: Direction,
    pub m_size: usize,
    pub n_opposite: usize,
    pub d_observed: usize,
    /// Number of true matches assumed by the test (the maximum-likelihood
    /// grid point when simulating).
    pub x_hat: usize,
    pub bound_value: f64,
    pub used_simulation: bool,
    pub p_value_empirical: Option<f64>,
    /// False when every match has a distinct counted tuple and no test ran.
    pub tested: bool,
    pub reject: bool,
}

impl DupFreeReport {
    /// The table under test is judged duplicate-free.
    pub fn dupfree(&self) -> bool {
        !self.reject
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln S2(n, k)` for `k = 0..=k_max` by the triangular recurrence in log
/// space. Entries with `k > n` are `-inf`.
pub fn stirling2_log_row(n: usize, k_max: usize) -> Vec<f64> {
    let mut row = vec![f64::NEG_INFINITY; k_max + 1];
    row[0] = 0.0;
    for m in 1..=n {
        let top = m.min(k_max);
        for k in (1..=top).rev() {
            let stay = if k <= m - 1 {
                row[k] + (k as f64).ln()
            } else {
                f64::NEG_INFINITY
            };
            row[k] = log_add(stay, row[k - 1]);
        }
        row[0] = f64::NEG_INFINITY;
    }
    row
}

/// `ln S2(n, k)`; `-inf` when `k > n` or `k = 0 < n`.
pub fn stirling2_log(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    stirling2_log_row(n, k)[k]
}

fn log_p_dr_from_row(row: &[f64], m_size: usize, n_r: usize, d_r: usize) -> f64 {
    if d_r == 0 || d_r > m_size.min(n_r) {
        return f64::NEG_INFINITY;
    }
    row[d_r] + ln_gamma(n_r as f64 + 1.0)
        - m_size as f64 * (n_r as f64).ln()
        - ln_gamma((n_r - d_r) as f64 + 1.0)
}

/// Probability of exactly `d_r` distinct values among `m_size` uniform
/// draws with replacement from `n_r` values.
pub fn p_dr_given_x0(m_size: usize, n_r: usize, d_r: usize) -> f64 {
    if d_r == 0 || d_r > m_size.min(n_r) {
        return if m_size == 0 && d_r == 0 { 1.0 } else { 0.0 };
    }
    let row = stirling2_log_row(m_size, d_r);
    log_p_dr_from_row(&row, m_size, n_r, d_r).exp()
}

/// `sum_{d < d_observed} p(d, x = 0)`, an upper bound on the null
/// probability of seeing fewer distinct values than observed.
pub fn dupfree_bound(m_size: usize, n_r: usize, d_observed: usize) -> f64 {
    if d_observed <= 1 || n_r == 0 {
        return 0.0;
    }
    let top = (d_observed - 1).min(m_size).min(n_r);
    let row = stirling2_log_row(m_size, top);
    let mut log_total = f64::NEG_INFINITY;
    for d in 1..=top {
        log_total = log_add(log_total, log_p_dr_from_row(&row, m_size, n_r, d));
    }
    log_total.exp().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub x: usize,
    /// Empirical probability of exactly the observed distinct count.
    pub p_equal: f64,
    /// Empirical probability of fewer distinct values than observed.
    pub p_below: f64,
}

/// The simulation grid `0, s, 2s, ..` with `s = ceil(m / 10)`, always
/// ending at `m`, capped at `n_r`.
pub fn x_grid(m_size: usize, n_r: usize) -> Vec<usize> {
    let step = m_size.div_ceil(10).max(1);
    let cap = m_size.min(n_r);
    let mut grid: Vec<usize> = (0..=m_size).step_by(step).filter(|&x| x <= cap).collect();
    if grid.last() != Some(&cap) {
        grid.push(cap);
    }
    grid
}

/// For each grid `x`: seed the bag with `x` unique values, add `m - x`
/// uniform draws from `1..=n_r`, and tally the distinct count.
pub fn simulate_grid(m_size: usize, n_r: usize, d_observed: usize, repeats: usize, seed: u64) -> Vec<GridPoint> {
    x_grid(m_size, n_r)
        .into_iter()
        .enumerate()
        .map(|(g, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64 + 1);
            let mut stamp = vec![0u32; n_r + 1];
            let (mut equal, mut below) = (0usize, 0usize);
            for rep in 1..=repeats as u32 {
                let mut distinct = x;
                for v in 1..=x {
                    stamp[v] = rep;
                }
                for _ in 0..m_size - x {
                    let v = rng.gen_range(1..=n_r);
                    if stamp[v] != rep {
                        stamp[v] = rep;
                        distinct += 1;
                    }
                }
                match distinct.cmp(&d_observed) {
                    std::cmp::Ordering::Equal => equal += 1,
                    std::cmp::Ordering::Less => below += 1,
                    std::cmp::Ordering::Greater => {}
                }
            }
            GridPoint {
                x,
                p_equal: equal as f64 / repeats as f64,
                p_below: below as f64 / repeats as f64,
            }
        })
        .collect()
}

pub fn dupfree_test(input: &DupFreeInput) -> Result<DupFreeReport> {
    let m_size = input.matches.len();
    if m_size == 0 {
        return Err(Error::Config("duplicate-free test needs at least one match".into()));
    }
    if !(input.c > 0.0 && input.c < 1.0) {
        return Err(Error::Config(format!("significance level {} outside (0, 1)", input.c)));
    }
    if input.sim_repeats == 0 {
        return Err(Error::Config("sim_repeats must be positive".into()));
    }
    let d_observed = input.counted().collect::<HashSet<_>>().len();
    if input.n_opposite < d_observed {
        return Err(Error::Config(format!(
            "counted side has {} tuples but {d_observed} distinct appear in the matches",
            input.n_opposite
        )));
    }
    let mut report = DupFreeReport {
        direction: input.direction,
        m_size,
        n_opposite: input.n_opposite,
        d_observed,
        x_hat: m_size,
        bound_value: 0.0,
        used_simulation: false,
        p_value_empirical: None,
        tested: false,
        reject: false,
    };
    if d_observed == m_size {
        return Ok(report);
    }
    report.tested = true;
    report.bound_value = dupfree_bound(m_size, input.n_opposite, d_observed);
    if report.bound_value < input.c {
        report.x_hat = 0;
        report.reject = true;
        return Ok(report);
    }
    report.used_simulation = true;
    let grid = simulate_grid(m_size, input.n_opposite, d_observed, input.sim_repeats, input.seed);
    let mut best = &grid[0];
    for g in &grid[1..] {
        if g.p_equal > best.p_equal {
            best = g;
        }
    }
    report.x_hat = best.x;
    report.p_value_empirical = Some(best.p_below);
    report.reject = best.p_below < input.c;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub c: f64,
    pub sim_repeats: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            c: 0.05,
            sim_repeats: 1000,
            seed: 0,
        }
    }
}

/// Builds the test input for one direction from the pairs with probability
/// above 0.5. Returns `None` when no pair qualifies.
pub fn input_from_assignment(gamma: &ProbAssignment, direction: Direction, cfg: &DetectConfig) -> Result<Option<DupFreeInput>> {
    if gamma.pair_set().kind() != TaskKind::TwoTable {
        return Err(Error::ModeMismatch {
            mode: "duplicate-free detection".into(),
            task: gamma.pair_set().kind().to_string(),
        });
    }
    let matches: Vec<(String, String)> = gamma
        .pairs()
        .iter()
        .zip(gamma.probs())
        .filter(|(_, &p)| p > 0.5)
        .map(|(pair, _)| (pair.a.id.clone(), pair.b.id.clone()))
        .collect();
    if matches.is_empty() {
        return Ok(None);
    }
    let n_opposite = gamma.pair_set().tuples().count_side(direction.counted_side());
    Ok(Some(DupFreeInput {
        matches,
        direction,
        n_opposite,
        c: cfg.c,
        sim_repeats: cfg.sim_repeats,
        seed: cfg.seed,
    }))
}

/// Runs both directions; `None` when there are no predicted matches.
pub fn detect_dupfree(gamma: &ProbAssignment, cfg: &DetectConfig) -> Result<Option<(DupFreeReport, DupFreeReport)>> {
    let Some(left) = input_from_assignment(gamma, Direction::TestLeft, cfg)? else {
        return Ok(None);
    };
    let right = input_from_assignment(gamma, Direction::TestRight, cfg)?.expect("same match set");
    Ok(Some((dupfree_test(&left)?, dupfree_test(&right)?)))
}

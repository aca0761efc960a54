//! Likelihood of the observed cells under the two-stage voting process, the
//! hidden-count fit and the overlap test.

use statrs::function::gamma::ln_gamma;

use super::{DependencyCounts, HiddenVoteEstimate};

/// `ln C(n, k)` with the gamma-function continuation for real `n`; `-inf`
/// outside `0 <= k <= n`.
pub fn log_binomial(n: f64, k: f64) -> f64 {
    if k < 0.0 || k > n + 1e-9 {
        return f64::NEG_INFINITY;
    }
    if k == 0.0 || (n - k).abs() < 1e-12 {
        return 0.0;
    }
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalized log masses of the number of successes when `draws` items are
/// taken without replacement from `population` items of which `successes`
/// are successes. Returns the smallest support value and the masses.
pub fn hypergeometric_log_pmf(population: f64, successes: f64, draws: u64) -> (u64, Vec<f64>) {
    let failures = population - successes;
    let lo = (draws as f64 - failures).ceil().max(0.0) as u64;
    let hi = (draws as f64).min((successes + 1e-9).floor()).max(0.0) as u64;
    if lo > hi {
        return (0, Vec::new());
    }
    let mut logs: Vec<f64> = (lo..=hi)
        .map(|k| log_binomial(successes, k as f64) + log_binomial(failures, (draws - k) as f64))
        .collect();
    let total = log_sum_exp(&logs);
    logs.iter_mut().for_each(|l| *l -= total);
    (lo, logs)
}

/// The eight cells as `a..h`: hit cells (both, first only, second only,
/// neither) then miss cells in the same order.
struct Cells {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
    g: f64,
    h: f64,
}

impl Cells {
    fn of(k: &DependencyCounts) -> Self {
        let x = |a, b, h| k.cell(a, b, h) as f64;
        Cells {
            a: x(true, true, true),
            b: x(true, false, true),
            c: x(false, true, true),
            d: x(false, false, true),
            e: x(true, true, false),
            f: x(true, false, false),
            g: x(false, true, false),
            h: x(false, false, false),
        }
    }

    fn n_pos(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }

    fn n1(&self) -> f64 {
        self.a + self.b + self.e + self.f
    }

    fn n2(&self) -> f64 {
        self.a + self.c + self.e + self.g
    }

    /// First step: the first part's random votes among everything but its
    /// confident votes.
    fn first_step(&self, t1: f64, z: f64) -> f64 {
        let n_neg = self.e + self.f + self.g + z;
        let correct = self.a + self.b;
        log_binomial(self.n_pos() - t1, correct - t1) + log_binomial(n_neg, self.e + self.f)
            - log_binomial(self.n_pos() + n_neg - t1, self.n1() - t1)
    }

    /// Second step with `s = t21 + t22` confident votes on the first's
    /// correct votes and `t23` where it abstained.
    fn second_step(&self, s: f64, t23: f64, z: f64) -> f64 {
        let on_first = self.a + self.b - s;
        let elsewhere = self.c + self.d - t23;
        let miss_rest = self.g + z;
        let drawn = (self.a - s) + (self.c - t23) + self.e + self.g;
        log_binomial(on_first, self.a - s)
            + log_binomial(elsewhere, self.c - t23)
            + log_binomial(self.e + self.f, self.e)
            + log_binomial(miss_rest, self.g)
            - log_binomial(on_first + elsewhere + self.e + self.f + miss_rest, drawn)
    }
}

/// Log probability of the observed cells given the hidden counts and the
/// reweighted count `z25` of pairs where neither votes and the label is a
/// miss. `-inf` when the hidden counts are inconsistent with the cells.
pub fn log_likelihood(counts: &DependencyCounts, t1: u64, t21: u64, t22: u64, t23: u64, z25: f64) -> f64 {
    let k = Cells::of(counts);
    let (t1f, s, t23f) = (t1 as f64, (t21 + t22) as f64, t23 as f64);
    let correct = k.a + k.b;
    if t1f > correct || t21 > t1 || t22 as f64 > correct - t1f || s > k.a || t23f > k.c || !(0.0..=k.h).contains(&z25) {
        return f64::NEG_INFINITY;
    }
    k.first_step(t1f, z25) + k.second_step(s, t23f, z25)
}

const GRID_POINTS: u64 = 20;

fn grid_axis(lo: u64, hi: u64) -> (u64, Vec<u64>) {
    let step = ((hi - lo) / GRID_POINTS).max(1);
    let mut pts: Vec<u64> = (lo..=hi).step_by(step as usize).collect();
    if pts.last() != Some(&hi) {
        pts.push(hi);
    }
    (step, pts)
}

/// Coarse grid with `step = max(1, range / 20)`, then repeated zooming into
/// the cell around the best point until the step is 1. Ties keep the
/// smallest coordinates.
fn zoom_search_1d(lo: u64, hi: u64, f: impl Fn(u64) -> f64) -> (u64, f64) {
    let (mut lo, mut hi) = (lo, hi);
    loop {
        let (step, pts) = grid_axis(lo, hi);
        let mut best = (pts[0], f(pts[0]));
        for &x in &pts[1..] {
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        if step == 1 {
            return best;
        }
        lo = best.0.saturating_sub(step).max(lo);
        hi = (best.0 + step).min(hi);
    }
}

fn zoom_search_2d(box_x: (u64, u64), box_y: (u64, u64), f: impl Fn(u64, u64) -> f64) -> ((u64, u64), f64) {
    let ((mut x0, mut x1), (mut y0, mut y1)) = (box_x, box_y);
    loop {
        let (sx, xs) = grid_axis(x0, x1);
        let (sy, ys) = grid_axis(y0, y1);
        let mut best = ((xs[0], ys[0]), f64::NEG_INFINITY);
        for &x in &xs {
            for &y in &ys {
                let v = f(x, y);
                if v > best.1 {
                    best = ((x, y), v);
                }
            }
        }
        if best.1 == f64::NEG_INFINITY {
            best.1 = f(xs[0], ys[0]);
        }
        if sx == 1 && sy == 1 {
            return best;
        }
        let (bx, by) = best.0;
        if sx > 1 {
            (x0, x1) = (bx.saturating_sub(sx).max(x0), (bx + sx).min(x1));
        }
        if sy > 1 {
            (y0, y1) = (by.saturating_sub(sy).max(y0), (by + sy).min(y1));
        }
    }
}

struct Fit {
    t1: u64,
    s: u64,
    t23: u64,
    value: f64,
}

fn fit_at(k: &Cells, z: f64) -> Fit {
    let correct = (k.a + k.b) as u64;
    let (t1, v1) = zoom_search_1d(0, correct, |t| k.first_step(t as f64, z));
    let ((s, t23), v2) = zoom_search_2d((0, k.a as u64), (0, k.c as u64), |s, t| {
        k.second_step(s as f64, t as f64, z)
    });
    Fit {
        t1,
        s,
        t23,
        value: v1 + v2,
    }
}

/// Maximum-likelihood hidden counts. For a fixed effective `z25` the two
/// voting steps decouple, so `t1` and `(t21 + t22, t23)` are searched
/// separately; `z25` itself is found by golden-section search. The sum
/// `t21 + t22` is split by filling `t21` first.
pub fn estimate_hidden(counts: &DependencyCounts) -> HiddenVoteEstimate {
    let k = Cells::of(counts);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, k.h);
    let mut best = fit_at(&k, hi);
    let mut best_z = hi;
    let consider = |z: f64, fit: Fit, best: &mut Fit, best_z: &mut f64| {
        if fit.value > best.value {
            *best = fit;
            *best_z = z;
        }
    };
    consider(0.0, fit_at(&k, 0.0), &mut best, &mut best_z);
    if k.h > 0.0 {
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (fit_at(&k, x1), fit_at(&k, x2));
        while hi - lo > 1e-6 * k.h.max(1.0) {
            if f1.value >= f2.value {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = fit_at(&k, x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = fit_at(&k, x2);
            }
        }
        let (z, fit) = if f1.value >= f2.value { (x1, f1) } else { (x2, f2) };
        consider(z, fit, &mut best, &mut best_z);
    }
    let t21 = best.s.min(best.t1);
    HiddenVoteEstimate {
        t1: best.t1,
        t21,
        t22: best.s - t21,
        t23: best.t23,
        effective_z25: best_z,
        effective_n_neg: k.e + k.f + k.g + best_z,
        log_likelihood: best.value,
    }
}

/// Outer points evaluated exactly; beyond this the support is strided.
const OUTER_EXACT: usize = 4096;

/// Upper bound on the null probability of at least the observed mistake
/// overlap: the outer sum runs over the first part's random miss count and
/// the inner tail is a hypergeometric survival function. Rejects when the
/// bound is below `c`.
pub fn overlap_test(counts: &DependencyCounts, hidden: &HiddenVoteEstimate, c: f64) -> (f64, bool) {
    let k = Cells::of(counts);
    let observed = counts.mistake_overlap();
    let n_pos = k.n_pos();
    let n_neg = hidden.effective_n_neg;
    let t1 = hidden.t1 as f64;
    let t2 = (hidden.t21 + hidden.t22 + hidden.t23) as f64;
    let draws1 = k.n1() - t1;
    let draws2 = k.n2() - t2;
    if observed == 0 || draws1 < 1.0 || draws2 < 1.0 {
        return (1.0, false);
    }
    let (lo1, outer) = hypergeometric_log_pmf(n_pos - t1 + n_neg, n_neg, draws1 as u64);
    if outer.is_empty() {
        return (1.0, false);
    }
    let peak = outer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stride = outer.len().div_ceil(OUTER_EXACT).max(1);
    let tail_at = |r12: u64| -> f64 {
        let (lo2, inner) = hypergeometric_log_pmf(n_pos - t2 + n_neg, r12 as f64, draws2 as u64);
        let start = observed.max(lo2);
        if inner.is_empty() || start > lo2 + inner.len() as u64 - 1 {
            return 0.0;
        }
        inner[(start - lo2) as usize..].iter().map(|l| l.exp()).sum::<f64>().min(1.0)
    };
    let mut total = 0.0;
    let mut cached: Option<(usize, f64)> = None;
    for (i, &lp) in outer.iter().enumerate() {
        if lp < peak - 40.0 {
            continue;
        }
        let anchor = i - i % stride;
        let tail = match cached {
            Some((a, t)) if a == anchor => t,
            _ => {
                let t = tail_at(lo1 + anchor as u64);
                cached = Some((anchor, t));
                t
            }
        };
        total += lp.exp() * tail;
    }
    let p = total.clamp(0.0, 1.0);
    (p, p < c)
}

//! Fixed-size symmetric probability matrices and the transitivity loss.

use crate::{Error, Result};

pub const N: usize = 32;
/// Off-diagonal cells above the diagonal.
pub const N_UPPER: usize = N * (N - 1) / 2;
pub const CLAMP_EPS: f64 = 1e-6;

/// Symmetric 32x32 matrix with unit diagonal and entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix32 {
    cells: Box<[f64; N * N]>,
}

impl Default for ProbMatrix32 {
    fn default() -> Self {
        ProbMatrix32::identity()
    }
}

impl ProbMatrix32 {
    /// Unit diagonal, zero elsewhere: 32 unrelated dummy tuples.
    pub fn identity() -> Self {
        let mut cells = Box::new([0.0; N * N]);
        for i in 0..N {
            cells[i * N + i] = 1.0;
        }
        ProbMatrix32 { cells }
    }

    /// Builds from a row-major 32x32 grid, validating the invariants.
    pub fn from_rows(values: &[f64]) -> Result<Self> {
        if values.len() != N * N {
            return Err(Error::DimensionMismatch {
                expected: N * N,
                got: values.len(),
            });
        }
        for i in 0..N {
            if values[i * N + i] != 1.0 {
                return Err(Error::Numerical(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..N {
                let v = values[i * N + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Numerical(format!("entry ({i}, {j}) = {v} outside [0, 1]")));
                }
                if v != values[j * N + i] {
                    return Err(Error::Numerical(format!("matrix asymmetric at ({i}, {j})")));
                }
            }
        }
        let mut cells = Box::new([0.0; N * N]);
        cells.copy_from_slice(values);
        Ok(ProbMatrix32 { cells })
    }

    /// Builds from the strict upper triangle in row-major order.
    pub fn from_upper(upper: &[f64]) -> Self {
        assert_eq!(upper.len(), N_UPPER);
        let mut m = ProbMatrix32::identity();
        let mut t = 0;
        for i in 0..N {
            for j in i + 1..N {
                m.set(i, j, upper[t]);
                t += 1;
            }
        }
        m
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_UPPER);
        for i in 0..N {
            for j in i + 1..N {
                out.push(self.get(i, j));
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * N + j]
    }

    /// Sets both `(i, j)` and `(j, i)`; `i != j`, `v` in [0, 1].
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i != j && (0.0..=1.0).contains(&v));
        self.cells[i * N + j] = v;
        self.cells[j * N + i] = v;
    }

    pub fn rows(&self) -> &[f64] {
        &self.cells[..]
    }

    /// Off-diagonal entries clamped into `[eps, 1 - eps]`.
    pub fn clamped(&self, eps: f64) -> Self {
        let mut m = self.clone();
        for i in 0..N {
            for j in i + 1..N {
                m.set(i, j, self.get(i, j).clamp(eps, 1.0 - eps));
            }
        }
        m
    }

    /// Largest absolute difference between two matrices.
    pub fn max_abs_diff(&self, other: &ProbMatrix32) -> f64 {
        self.cells
            .iter()
            .zip(other.cells.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Swaps tuple `k` with tuple `i`, then tuple `l` with tuple `j`, permuting
/// rows and columns. `swap(g, 0, 1, 2, 3)` moves old cell (2, 3) to (0, 1).
pub fn swap(g: &ProbMatrix32, i: usize, j: usize, k: usize, l: usize) -> ProbMatrix32 {
    let mut perm: [usize; N] = std::array::from_fn(|x| x);
    perm.swap(i, k);
    perm.swap(j, l);
    permute(g, &perm)
}

/// New tuple `x` is old tuple `perm[x]`.
pub fn permute(g: &ProbMatrix32, perm: &[usize; N]) -> ProbMatrix32 {
    let mut out = ProbMatrix32::identity();
    for x in 0..N {
        for y in 0..N {
            out.cells[x * N + y] = g.get(perm[x], perm[y]);
        }
    }
    out
}

/// Sum of `relu(g[i][j] * g[i][k] - g[j][k])` over ordered triples of
/// distinct indices. Every unordered `{j, k}` is visited twice per pivot.
pub fn transitivity_loss(g: &ProbMatrix32) -> f64 {
    let mut total = 0.0;
    for i in 0..N {
        let row = &g.cells[i * N..(i + 1) * N];
        for j in 0..N {
            if j == i {
                continue;
            }
            for k in j + 1..N {
                if k == i {
                    continue;
                }
                let v = row[j] * row[k] - g.get(j, k);
                if v > 0.0 {
                    total += 2.0 * v;
                }
            }
        }
    }
    total
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    kl
}

/// Free-energy distance of `g` from `star` over ordered off-diagonal pairs,
/// both clamped to `[eps, 1 - eps]`.
pub fn h1(star: &ProbMatrix32, g: &ProbMatrix32) -> f64 {
    let mut total = 0.0;
    for i in 0..N {
        for j in i + 1..N {
            let s = star.get(i, j).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            let v = g.get(i, j).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            total += 2.0 * bernoulli_kl(v, s);
        }
    }
    total
}

/// `alpha * transitivity_loss(g) + h1(star, g)`.
pub fn penalized_loss(star: &ProbMatrix32, g: &ProbMatrix32, alpha: f64) -> f64 {
    alpha * transitivity_loss(g) + h1(star, g)
}

/// Smallest matrix above `g` in the max-product order that is transitive:
/// entry (j, k) becomes the best product of entries along any path.
pub fn max_product_closure(g: &ProbMatrix32) -> ProbMatrix32 {
    let mut c = g.clone();
    for m in 0..N {
        for j in 0..N {
            let cjm = c.get(j, m);
            if cjm == 0.0 {
                continue;
            }
            for k in 0..N {
                let via = cjm * c.get(m, k);
                if via > c.cells[j * N + k] {
                    c.cells[j * N + k] = via;
                }
            }
        }
    }
    c
}

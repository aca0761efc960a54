//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::matrix::{ProbMatrix32, N};

/// Row-major eigenvector matrix (column `c` is the `c`-th eigenvector) and
/// eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectral {
    pub vectors: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectral {
    /// Row `r` of V: the coordinates of tuple `r` in the eigenbasis.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.vectors[r * N..(r + 1) * N]
    }

    /// `max |V W V^T - g|`.
    pub fn reconstruction_error(&self, g: &ProbMatrix32) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..N {
            for j in 0..N {
                let mut s = 0.0;
                for c in 0..N {
                    s += self.vectors[i * N + c] * self.values[c] * self.vectors[j * N + c];
                }
                worst = worst.max((s - g.get(i, j)).abs());
            }
        }
        worst
    }
}

/// Eigendecomposition of a symmetric `n x n` row-major matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    (values, v)
}

/// Eigenvalues sorted descending (ties by original column), each
/// eigenvector signed so its largest-magnitude entry (first on ties) is
/// positive.
pub fn spectral_features(g: &ProbMatrix32) -> Spectral {
    let (values, v) = jacobi_eigen(g.rows(), N);
    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&x, &y| values[y].total_cmp(&values[x]).then(x.cmp(&y)));
    let mut vectors = vec![0.0; N * N];
    let mut sorted = Vec::with_capacity(N);
    for (c, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 1..N {
            if v[r * N + src].abs() > v[pivot * N + src].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot * N + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..N {
            vectors[r * N + c] = sign * v[r * N + src];
        }
        sorted.push(values[src]);
    }
    Spectral {
        vectors,
        values: sorted,
    }
}

//! Partial-DFT tap bases and orthogonal projections onto them.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::signal::SubcarrierGrid;

/// Column `j` is `exp(-j 2 pi k d_j / N)` over the active bins `k`.
pub fn tap_basis(grid: &SubcarrierGrid, delays: &[f64]) -> Vec<Vec<Complex64>> {
    delays.iter().map(|&d| (0..grid.len()).map(|i| grid.phasor(i, d)).collect()).collect()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Thin QR factorization `A = Q R` of a column list, by modified Gram-Schmidt
/// with one reorthogonalization pass.
#[derive(Debug, Clone)]
pub struct ThinQr {
    q: Vec<Vec<Complex64>>,
    /// Upper triangular, row-major `n x n`.
    r: Vec<Complex64>,
}

impl ThinQr {
    pub fn new(columns: &[Vec<Complex64>]) -> Result<Self> {
        let n = columns.len();
        let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        let mut r = vec![Complex64::default(); n * n];
        for (j, col) in columns.iter().enumerate() {
            let mut v = col.clone();
            let scale = norm(col);
            for _ in 0..2 {
                for (i, qi) in q.iter().enumerate() {
                    let c = dot(qi, &v);
                    r[i * n + j] += c;
                    for (vk, qk) in v.iter_mut().zip(qi) {
                        *vk -= c * qk;
                    }
                }
            }
            let nv = norm(&v);
            if !(nv > 1e-10 * scale.max(f64::MIN_POSITIVE)) {
                return Err(CoreError::RankDeficient(j));
            }
            r[j * n + j] = Complex64::new(nv, 0.0);
            q.push(v.iter().map(|x| x / nv).collect());
        }
        Ok(Self { q, r })
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    /// `Q^H y`.
    pub fn coefficients(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.q.iter().map(|qi| dot(qi, y)).collect()
    }

    /// Orthogonal projection of `y` onto the column space.
    pub fn project(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); y.len()];
        for qi in &self.q {
            let c = dot(qi, y);
            for (o, q) in out.iter_mut().zip(qi) {
                *o += c * q;
            }
        }
        out
    }

    /// `y` minus its projection.
    pub fn residual(&self, y: &[Complex64]) -> Vec<Complex64> {
        let p = self.project(y);
        y.iter().zip(p).map(|(a, b)| a - b).collect()
    }

    /// Least-squares coefficients `a = argmin ||y - A a||`, via `R a = Q^H y`.
    pub fn solve(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.rank();
        let mut a = self.coefficients(y);
        for i in (0..n).rev() {
            let mut s = a[i];
            for j in i + 1..n {
                s -= self.r[i * n + j] * a[j];
            }
            a[i] = s / self.r[i * n + i];
        }
        a
    }
}

//! Symmetric banded matrices and a banded Cholesky solver.
//!
//! Every matrix the scheme needs (mass, stiffness, Newton Jacobian) is
//! symmetric with a bandwidth fixed by the mesh: tridiagonal for 1D P1,
//! `nx` for the structured 2D triangulation, diagonal for the sine basis.
//! Only the lower band is stored.

use crate::error::{Error, Result};

/// Symmetric matrix with lower bandwidth `bw` (entries with `|i - j| > bw` are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), 0);
        m.data.copy_from_slice(diag);
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `value` to the symmetric pair `(i, j)` / `(j, i)`.
    ///
    /// Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            i - j <= self.bw,
            "entry ({i}, {j}) outside bandwidth {}",
            self.bw
        );
        let k = self.idx(i, j);
        self.data[k] += value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = row[self.bw] * x[i];
            for j in lo..i {
                let a = row[j + self.bw - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// `alpha * self + beta * other`, with the wider of the two bandwidths.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = Self::zeros(self.n, self.bw.max(other.bw));
        for src in [(self, alpha), (other, beta)] {
            let (m, s) = src;
            if s == 0.0 {
                continue;
            }
            for i in 0..m.n {
                for j in i.saturating_sub(m.bw)..=i {
                    let v = m.data[m.idx(i, j)];
                    if v != 0.0 {
                        out.add(i, j, s * v);
                    }
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Banded Cholesky factorization `M = L Lᵀ`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = l[at(j, j)];
            for k in lo..j {
                d -= l[at(j, k)] * l[at(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numeric(format!(
                    "matrix not positive definite (pivot {d:e} at row {j})"
                )));
            }
            let d = d.sqrt();
            l[at(j, j)] = d;
            for i in j + 1..=(j + bw).min(n - 1) {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = l[at(i, j)];
                for k in lo_i..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                l[at(i, j)] = s / d;
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

/// Cholesky factor of a [`SymBandMatrix`].
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let (n, bw) = (self.n, self.bw);
        let at = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[at(i, k)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..=(i + bw).min(n.saturating_sub(1)) {
                s -= self.l[at(k, i)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        y
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a + s * b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

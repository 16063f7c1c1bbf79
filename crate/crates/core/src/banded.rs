//! Banded matrices and an in-place LU factorization without pivoting.
//!
//! Every operator factorized here (the symmetrized elliptic operator and the
//! upwinded state Jacobian) is a nonsingular M-matrix, for which Gaussian
//! elimination without pivoting is stable and preserves the band.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Square matrix stored row-wise inside a band of `lower` sub- and `upper`
/// super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn lower(&self) -> usize {
        self.lower
    }

    #[inline]
    pub fn upper(&self) -> usize {
        self.upper
    }

    #[inline]
    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper, "({i},{j}) outside band");
        i * self.width() + (j + self.lower - i)
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper && i < self.n && j < self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    #[inline]
    fn col_range(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.lower), (i + self.upper).min(self.n - 1))
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let w = self.width();
        for i in 0..self.n {
            let (lo, hi) = self.col_range(i);
            let row = &self.data[i * w..(i + 1) * w];
            let off = lo + self.lower - i;
            let mut s = 0.0;
            for (a, xj) in row[off..off + hi - lo + 1].iter().zip(&x[lo..=hi]) {
                s += a * xj;
            }
            y[i] = s;
        }
    }

    /// `y = A^T x`
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let w = self.width();
        for i in 0..self.n {
            let (lo, hi) = self.col_range(i);
            let row = &self.data[i * w..(i + 1) * w];
            let off = lo + self.lower - i;
            let xi = x[i];
            for (a, yj) in row[off..off + hi - lo + 1].iter().zip(&mut y[lo..=hi]) {
                *yj += a * xi;
            }
        }
    }

    /// Factorize in place. Consumes the matrix.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let w = self.width();
        let (kl, ku) = (self.lower, self.upper);
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if !(pivot.abs() > f64::MIN_POSITIVE) || !pivot.is_finite() {
                return Err(Error::SingularFactorization { pivot: k, value: pivot });
            }
            let inv = 1.0 / pivot;
            let jmax = (k + ku).min(n - 1);
            let imax = (k + kl).min(n - 1);
            for i in k + 1..=imax {
                let lik_idx = i * w + (k + kl - i);
                let l = self.data[lik_idx] * inv;
                self.data[lik_idx] = l;
                if l == 0.0 {
                    continue;
                }
                // row i, columns k+1..=jmax  minus l * row k, same columns
                let (head, tail) = self.data.split_at_mut(i * w);
                let row_k = &head[k * w + kl + 1..k * w + kl + 1 + (jmax - k)];
                let start = k + 1 + kl - i;
                let row_i = &mut tail[start..start + (jmax - k)];
                for (a, b) in row_i.iter_mut().zip(row_k) {
                    *a -= l * b;
                }
            }
        }
        Ok(BandedLu { lu: self })
    }
}

/// `A = L U` with unit-diagonal `L`, both stored in the original band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedLu {
    lu: BandedMatrix,
}

impl BandedLu {
    #[inline]
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        let w = m.width();
        let kl = m.lower;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let row = &m.data[i * w + (lo + kl - i)..i * w + kl];
            let mut s = b[i];
            for (l, bj) in row.iter().zip(&b[lo..i]) {
                s -= l * bj;
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + m.upper).min(n - 1);
            let base = i * w + kl;
            let row = &m.data[base + 1..base + 1 + (hi - i)];
            let mut s = b[i];
            for (u, bj) in row.iter().zip(&b[i + 1..=hi]) {
                s -= u * bj;
            }
            b[i] = s / m.data[base];
        }
    }

    /// Solve `A^T x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        let w = m.width();
        let kl = m.lower;
        // U^T z = b (forward, column-oriented)
        for i in 0..n {
            let base = i * w + kl;
            let zi = b[i] / m.data[base];
            b[i] = zi;
            let hi = (i + m.upper).min(n - 1);
            let row = &m.data[base + 1..base + 1 + (hi - i)];
            for (u, bj) in row.iter().zip(&mut b[i + 1..=hi]) {
                *bj -= u * zi;
            }
        }
        // L^T x = z (backward, column-oriented)
        for i in (0..n).rev() {
            let lo = i.saturating_sub(kl);
            let xi = b[i];
            let row = &m.data[i * w + (lo + kl - i)..i * w + kl];
            for (l, bj) in row.iter().zip(&mut b[lo..i]) {
                *bj -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}

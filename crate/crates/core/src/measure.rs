//! Discretized Gaussian measures with elliptic-operator covariances.
//!
//! The covariance is `C = s^2 A^{-2}` with `A = delta I + gamma L`, where `L`
//! is the symmetrized finite-difference Neumann Laplacian on a uniform grid of
//! the unit square (or interval) and `s^2` is the white-noise variance per
//! node, `h^{-d}` by default. `C^{1/2} = s A^{-1}` exactly.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Default cap on the number of grid nodes.
pub const DEFAULT_SIZE_CAP: usize = 20_000;

/// Largest dimension for which covariances without structure are densified
/// (KLE fallback).
pub const DENSE_CAP: usize = 4_096;

/// Uniform grid on `[0, 1]^d` including the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    dim: usize,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, points: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid("dim", "grid dimension must be 1 or 2"));
        }
        if points < 2 {
            return Err(Error::invalid("points", "need at least two points per axis"));
        }
        Ok(Self { dim, points })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / (self.points - 1) as f64
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    /// Coordinates of node `k` (`k = j * points + i` in 2D).
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let h = self.spacing();
        let i = k % self.points;
        let j = k / self.points;
        [i as f64 * h, j as f64 * h]
    }

    /// Trapezoidal quadrature weight of node `k`.
    pub fn quadrature_weight(&self, k: usize) -> f64 {
        let h = self.spacing();
        let end = |i: usize| if i == 0 || i == self.points - 1 { 0.5 } else { 1.0 };
        match self.dim {
            1 => h * end(k),
            _ => h * h * end(k % self.points) * end(k / self.points),
        }
    }
}

/// Symmetric positive-definite covariance operator on `R^n`.
///
/// `apply_sqrt` applies a factor `L` with `C = L L^T`; for the elliptic
/// covariance `L` is symmetric. `apply_inv_sqrt` applies `L^{-1}`.
pub trait Covariance: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_inv(&self, x: &[f64]) -> Vec<f64>;
    fn apply_sqrt(&self, x: &[f64]) -> Vec<f64>;
    fn apply_inv_sqrt(&self, x: &[f64]) -> Vec<f64>;
    fn trace(&self) -> f64;

    /// Leading `rank` eigenpairs. The default densifies the operator.
    fn kle(&self, rank: usize) -> Result<KLBasis> {
        let n = self.dim();
        check_rank(rank, n)?;
        if n > DENSE_CAP {
            return Err(Error::SizeCap { n, cap: DENSE_CAP });
        }
        let c = densify(n, |x| self.apply(x));
        let c = 0.5 * (&c + c.transpose());
        let eig = c.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order[..rank].iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = order[..rank]
            .iter()
            .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        KLBasis::new(values, vectors)
    }
}

pub(crate) fn check_rank(rank: usize, dim: usize) -> Result<()> {
    if rank == 0 || rank > dim {
        Err(Error::RankOutOfBounds { rank, dim })
    } else {
        Ok(())
    }
}

/// Dense matrix of a linear map given by its action.
pub fn densify(n: usize, mut op: impl FnMut(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        let col = op(&e);
        m.column_mut(k).copy_from_slice(&col);
        e[k] = 0.0;
    }
    m
}

/// Matérn-type coefficients `(gamma, delta)` giving correlation length
/// `corr_len` and pointwise variance `variance` for the continuous operator
/// `(delta - gamma Laplacian)^{-2}` in dimension `dim`.
pub fn matern_coefficients(dim: usize, corr_len: f64, variance: f64) -> Result<(f64, f64)> {
    if !(corr_len > 0.0) {
        return Err(Error::invalid("corr_len", "must be positive"));
    }
    if !(variance > 0.0) {
        return Err(Error::invalid("variance", "must be positive"));
    }
    let d = dim as f64;
    let nu = 2.0 - 0.5 * d;
    let kappa = (8.0 * nu).sqrt() / corr_len;
    let s = variance.sqrt() * kappa.powf(nu) * ((4.0 * PI).powf(0.5 * d) / libm::tgamma(nu)).sqrt();
    Ok((1.0 / s, kappa * kappa / s))
}

/// How the target pointwise variance of a Matérn field is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum VarianceCalibration {
    /// Coefficients of the stationary field on all of `R^d`. Neumann
    /// reflections raise the variance of the discrete field above the
    /// target, strongly so when the correlation length is comparable to
    /// the domain.
    #[default]
    Continuum,
    /// Rescale the noise so the nodal variances average to the target.
    MeanPointwise,
}

/// Elliptic covariance with correlation length `corr_len` and pointwise
/// variance `variance` realized according to `calibration`.
pub fn matern_covariance(
    grid: Grid,
    corr_len: f64,
    variance: f64,
    calibration: VarianceCalibration,
) -> Result<EllipticCovariance> {
    match calibration {
        VarianceCalibration::Continuum => {
            let (gamma, delta) = matern_coefficients(grid.dim(), corr_len, variance)?;
            build_elliptic_covariance(grid, gamma, delta)
        }
        VarianceCalibration::MeanPointwise => {
            let (gamma, delta) = matern_coefficients(grid.dim(), corr_len, 1.0)?;
            let unit = build_elliptic_covariance(grid, gamma, delta)?;
            let mean_var = unit.trace() / grid.size() as f64;
            let opts = EllipticOptions {
                noise_variance: Some(unit.noise_variance() * variance / mean_var),
                ..EllipticOptions::default()
            };
            EllipticCovariance::new(grid, gamma, delta, opts)
        }
    }
}

/// Eigenpairs of the 1D symmetrized Neumann Laplacian, ascending.
fn laplacian_1d_eigen(points: usize, h: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = (points - 1) as f64;
    let mut values = Vec::with_capacity(points);
    let mut vectors = Vec::with_capacity(points);
    for k in 0..points {
        let s = (k as f64 * PI / (2.0 * m)).sin();
        values.push(4.0 * s * s / (h * h));
        let mut v: Vec<f64> = (0..points)
            .map(|i| {
                let w = if i == 0 || i == points - 1 { 0.5f64 } else { 1.0 };
                w.sqrt() * (k as f64 * PI * i as f64 / m).cos()
            })
            .collect();
        let nv = crate::math::norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        vectors.push(v);
    }
    (values, vectors)
}

/// Construction options for [`EllipticCovariance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticOptions {
    /// White-noise variance per node; `None` means `h^{-d}`.
    pub noise_variance: Option<f64>,
    pub size_cap: usize,
}

impl Default for EllipticOptions {
    fn default() -> Self {
        Self {
            noise_variance: None,
            size_cap: DEFAULT_SIZE_CAP,
        }
    }
}

/// `C = s^2 (delta I + gamma L)^{-2}` with a banded factorization of `A`.
#[derive(Debug, Clone)]
pub struct EllipticCovariance {
    grid: Grid,
    gamma: f64,
    delta: f64,
    noise_variance: f64,
    a: BandedMatrix,
    lu: BandedLu,
    lap_values: Vec<f64>,
}

/// Build the elliptic covariance with default options.
pub fn build_elliptic_covariance(grid: Grid, gamma: f64, delta: f64) -> Result<EllipticCovariance> {
    EllipticCovariance::new(grid, gamma, delta, EllipticOptions::default())
}

impl EllipticCovariance {
    pub fn new(grid: Grid, gamma: f64, delta: f64, opts: EllipticOptions) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive and finite"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta", "must be positive and finite"));
        }
        let n = grid.size();
        if n > opts.size_cap {
            return Err(Error::SizeCap { n, cap: opts.size_cap });
        }
        let h = grid.spacing();
        let noise_variance = opts
            .noise_variance
            .unwrap_or_else(|| h.powi(-(grid.dim() as i32)));
        if !(noise_variance > 0.0) {
            return Err(Error::invalid("noise_variance", "must be positive"));
        }

        let p = grid.points();
        let frac = |i: usize| if i == 0 || i == p - 1 { 0.5f64 } else { 1.0 };
        let l1 = |i: usize, j: usize| -> f64 {
            if i == j {
                let deg = if i == 0 || i == p - 1 { 1.0 } else { 2.0 };
                deg / frac(i) / (h * h)
            } else {
                -1.0 / (frac(i) * frac(j)).sqrt() / (h * h)
            }
        };

        let band = if grid.dim() == 1 { 1 } else { p };
        let mut a = BandedMatrix::zeros(n, band, band);
        for k in 0..n {
            a.add(k, k, delta);
        }
        match grid.dim() {
            1 => {
                for i in 0..p {
                    for j in i.saturating_sub(1)..(i + 2).min(p) {
                        a.add(i, j, gamma * l1(i, j));
                    }
                }
            }
            _ => {
                for jy in 0..p {
                    for ix in 0..p {
                        let k = jy * p + ix;
                        for i2 in ix.saturating_sub(1)..(ix + 2).min(p) {
                            a.add(k, jy * p + i2, gamma * l1(ix, i2));
                        }
                        for j2 in jy.saturating_sub(1)..(jy + 2).min(p) {
                            a.add(k, j2 * p + ix, gamma * l1(jy, j2));
                        }
                    }
                }
            }
        }
        let lu = a.clone().factorize()?;
        let (lap_values, _) = laplacian_1d_eigen(p, h);
        Ok(Self {
            grid,
            gamma,
            delta,
            noise_variance,
            a,
            lu,
            lap_values,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `A x`
    pub fn apply_operator(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.a.matvec(x, &mut y);
        y
    }

    /// `A^{-1} x`
    pub fn solve_operator(&self, x: &[f64]) -> Vec<f64> {
        self.lu.solve(x)
    }

    /// Eigenvalues of `A`, unsorted, with their 1D mode indices.
    fn operator_spectrum(&self) -> Vec<(f64, usize, usize)> {
        let mu = &self.lap_values;
        match self.grid.dim() {
            1 => mu
                .iter()
                .enumerate()
                .map(|(a, m)| (self.delta + self.gamma * m, a, 0))
                .collect(),
            _ => {
                let mut out = Vec::with_capacity(mu.len() * mu.len());
                for (b, mb) in mu.iter().enumerate() {
                    for (a, ma) in mu.iter().enumerate() {
                        out.push((self.delta + self.gamma * (ma + mb), a, b));
                    }
                }
                out
            }
        }
    }
}

impl Covariance for EllipticCovariance {
    fn dim(&self) -> usize {
        self.grid.size()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.lu.solve(x);
        self.lu.solve_in_place(&mut y);
        crate::math::scale(self.noise_variance, &mut y);
        y
    }

    fn apply_inv(&self, x: &[f64]) -> Vec<f64> {
        let y = self.apply_operator(x);
        let mut z = self.apply_operator(&y);
        crate::math::scale(1.0 / self.noise_variance, &mut z);
        z
    }

    fn apply_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.lu.solve(x);
        crate::math::scale(self.noise_variance.sqrt(), &mut y);
        y
    }

    fn apply_inv_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_operator(x);
        crate::math::scale(1.0 / self.noise_variance.sqrt(), &mut y);
        y
    }

    fn trace(&self) -> f64 {
        self.operator_spectrum()
            .iter()
            .map(|(a, _, _)| self.noise_variance / (a * a))
            .sum()
    }

    fn kle(&self, rank: usize) -> Result<KLBasis> {
        let n = self.dim();
        check_rank(rank, n)?;
        let mut spec = self.operator_spectrum();
        spec.sort_by(|x, y| x.0.total_cmp(&y.0));
        let p = self.grid.points();
        let (_, v1) = laplacian_1d_eigen(p, self.grid.spacing());
        let mut values = Vec::with_capacity(rank);
        let mut vectors = Vec::with_capacity(rank);
        for &(ev, a, b) in &spec[..rank] {
            values.push(self.noise_variance / (ev * ev));
            let phi = match self.grid.dim() {
                1 => v1[a].clone(),
                _ => {
                    let mut phi = vec![0.0; n];
                    for j in 0..p {
                        for i in 0..p {
                            phi[j * p + i] = v1[a][i] * v1[b][j];
                        }
                    }
                    phi
                }
            };
            vectors.push(phi);
        }
        KLBasis::new(values, vectors)
    }
}

/// Covariance given as an explicit SPD matrix, factorized by Cholesky.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl DenseCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let sym = 0.5 * (&matrix + matrix.transpose());
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance", "matrix is not positive definite"))?;
        Ok(Self {
            matrix: sym,
            factor: chol.l(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

impl Covariance for DenseCovariance {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn apply_inv(&self, x: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(x);
        self.factor.solve_lower_triangular_mut(&mut v);
        self.factor.tr_solve_lower_triangular_mut(&mut v);
        v.as_slice().to_vec()
    }

    fn apply_sqrt(&self, x: &[f64]) -> Vec<f64> {
        (&self.factor * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn apply_inv_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(x);
        self.factor.solve_lower_triangular_mut(&mut v);
        v.as_slice().to_vec()
    }

    fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

/// Leading eigenpairs of a covariance, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KLBasis {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

impl KLBasis {
    pub fn new(values: Vec<f64>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: vectors.len(),
            });
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("values", "eigenvalues must be descending"));
        }
        Ok(Self { values, vectors })
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Eigenpair `k`, zero-based.
    pub fn mode(&self, k: usize) -> Result<(f64, &[f64])> {
        match self.values.get(k) {
            Some(&v) => Ok((v, &self.vectors[k])),
            None => Err(Error::IndexOutOfRange {
                index: k,
                len: self.values.len(),
            }),
        }
    }
}

/// `N(mean, C)`.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    covariance: Arc<dyn Covariance>,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, covariance: Arc<dyn Covariance>) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::DimensionMismatch {
                expected: covariance.dim(),
                got: mean.len(),
            });
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("mean"));
        }
        Ok(Self { mean, covariance })
    }

    /// Centered measure.
    pub fn centered(covariance: Arc<dyn Covariance>) -> Self {
        Self {
            mean: vec![0.0; covariance.dim()],
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Arc<dyn Covariance> {
        &self.covariance
    }

    /// `C^{-1/2}`-type whitening: `L^{-1}(m - mean)`.
    pub fn whiten(&self, m: &[f64]) -> Result<Vec<f64>> {
        self.check_len(m.len())?;
        let d: Vec<f64> = m.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.covariance.apply_inv_sqrt(&d))
    }

    /// Inverse of [`whiten`](Self::whiten): `mean + L w`.
    pub fn unwhiten(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_len(w.len())?;
        let mut m = self.covariance.apply_sqrt(w);
        crate::math::axpy(1.0, &self.mean, &mut m);
        Ok(m)
    }

    /// Draw number `index` of the sequence determined by `seed`.
    pub fn sample_indexed(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, rng::MEASURE_BASE + index);
        self.sample_with(&mut r)
    }

    /// Draw using a caller-provided stream.
    pub fn sample_with(&self, r: &mut rng::Rng) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        rng::fill_standard_normal(r, &mut w);
        let mut m = self.covariance.apply_sqrt(&w);
        crate::math::axpy(1.0, &self.mean, &mut m);
        m
    }

    /// `count` i.i.d. draws, one row each.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        Ok((0..count as u64).map(|i| self.sample_indexed(seed, i)).collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            })
        } else {
            Ok(())
        }
    }
}

/// Leading eigenpairs of a covariance operator.
pub fn kle(covariance: &dyn Covariance, rank: usize) -> Result<KLBasis> {
    covariance.kle(rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dot;

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed, 7);
        let mut v = vec![0.0; n];
        rng::fill_standard_normal(&mut r, &mut v);
        v
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn symmetric_positive_and_invertible() {
        for grid in [Grid::new(1, 64).unwrap(), Grid::new(2, 12).unwrap()] {
            let c = build_elliptic_covariance(grid, 0.1, 0.3).unwrap();
            let n = c.dim();
            for s in 0..5 {
                let x = random_vec(s, n);
                let y = random_vec(s + 100, n);
                let cx = c.apply(&x);
                let cy = c.apply(&y);
                assert!(rel(dot(&cx, &y), dot(&x, &cy)) < 1e-10);
                assert!(dot(&x, &cx) > 0.0);
                let back = c.apply_inv(&cx);
                let err: f64 = back.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(err / crate::math::norm(&x) < 1e-8);
                let s2 = c.apply_sqrt(&c.apply_sqrt(&x));
                for (a, b) in s2.iter().zip(&cx) {
                    assert!((a - b).abs() < 1e-10 * crate::math::norm(&cx));
                }
            }
        }
    }

    #[test]
    fn matches_dense_eigendecomposition() {
        let grid = Grid::new(1, 64).unwrap();
        let c = build_elliptic_covariance(grid, 0.1, 0.1).unwrap();
        let a = densify(64, |x| c.apply_operator(x));
        let eig = a.clone().symmetric_eigen();
        // C = s^2 V diag(1/a^2) V^T
        let s2 = c.noise_variance();
        let mut dense = DMatrix::zeros(64, 64);
        for k in 0..64 {
            let v = eig.eigenvectors.column(k);
            dense += (s2 / eig.eigenvalues[k].powi(2)) * v * v.transpose();
        }
        let op = densify(64, |x| c.apply(x));
        assert!((&op - &dense).norm() / dense.norm() < 1e-10);
        assert!(rel(c.trace(), dense.trace()) < 1e-8);
        let kl = c.kle(64).unwrap();
        let mut sorted: Vec<f64> = eig.eigenvalues.iter().map(|a| s2 / (a * a)).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in kl.values().iter().zip(&sorted) {
            assert!(rel(*x, *y) < 1e-9);
        }
    }

    #[test]
    fn kle_pairs_and_reconstruction() {
        let grid = Grid::new(2, 8).unwrap();
        let c = build_elliptic_covariance(grid, 0.05, 1.0).unwrap();
        let n = grid.size();
        let kl = c.kle(n).unwrap();
        assert!(rel(kl.values()[0], c.noise_variance()) < 1e-12);
        let mut recon = DMatrix::zeros(n, n);
        for (l, v) in kl.values().iter().zip(kl.vectors()) {
            let cv = c.apply(v);
            let res: f64 = cv.iter().zip(v).map(|(a, b)| (a - l * b).powi(2)).sum::<f64>().sqrt();
            assert!(res <= 1e-8 * l);
            let dv = DVector::from_column_slice(v);
            recon += *l * &dv * dv.transpose();
        }
        for i in 0..n {
            for j in 0..n {
                let d = dot(&kl.vectors()[i], &kl.vectors()[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        let dense = densify(n, |x| c.apply(x));
        assert!((&recon - &dense).norm() / dense.norm() < 1e-8);
        let tr: f64 = kl.values().iter().sum();
        assert!(rel(tr, dense.trace()) < 1e-8);
    }

    #[test]
    fn leading_eigenvalue_and_decay() {
        let grid = Grid::new(2, 16).unwrap();
        let opts = EllipticOptions {
            noise_variance: Some(1.0),
            ..Default::default()
        };
        let c = EllipticCovariance::new(grid, 0.1, 0.1, opts).unwrap();
        let kl = c.kle(10).unwrap();
        assert!(rel(kl.values()[0], 0.1f64.powi(-2)) < 1e-12);
        let decay = |g: f64, d: f64| {
            let c = EllipticCovariance::new(grid, g, d, opts).unwrap();
            let kl = c.kle(10).unwrap();
            kl.values()[9] / kl.values()[0]
        };
        // shorter correlation length decays more slowly
        assert!(decay(0.001, 1.0) > decay(0.1, 1.0));
    }

    #[test]
    fn matern_relation() {
        let (g, d) = matern_coefficients(2, 1.0, 1.0).unwrap();
        assert!(rel((8.0 * g / d).sqrt(), 1.0) < 1e-14);
        assert!(rel(g * d, 1.0 / (4.0 * PI)) < 1e-14);
        let (g, d) = matern_coefficients(2, 8f64.sqrt(), 0.3).unwrap();
        assert!(rel(g, d) < 1e-12);
    }

    #[test]
    fn interior_variance_matches_target() {
        let grid = Grid::new(2, 41).unwrap();
        let (g, d) = matern_coefficients(2, 0.3, 1.0).unwrap();
        let c = build_elliptic_covariance(grid, g, d).unwrap();
        let mut e = vec![0.0; grid.size()];
        let mid = 20 * 41 + 20;
        e[mid] = 1.0;
        let var = c.apply(&e)[mid];
        assert!((var - 1.0).abs() < 0.1, "interior variance {var}");
    }

    #[test]
    fn mean_pointwise_calibration() {
        let grid = Grid::new(2, 16).unwrap();
        let c = matern_covariance(grid, 1.0, 0.7, VarianceCalibration::MeanPointwise).unwrap();
        let n = grid.size();
        let diag: f64 = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                c.apply(&e)[k]
            })
            .sum();
        assert!(rel(diag / n as f64, 0.7) < 1e-10);
        let raw = matern_covariance(grid, 1.0, 0.7, VarianceCalibration::Continuum).unwrap();
        assert!(raw.trace() > c.trace());
        assert!(rel(raw.gamma() / raw.delta(), c.gamma() / c.delta()) < 1e-14);
    }

    #[test]
    fn whiten_roundtrip_and_solve() {
        let grid = Grid::new(2, 10).unwrap();
        let c: Arc<dyn Covariance> = Arc::new(build_elliptic_covariance(grid, 0.1, 0.5).unwrap());
        let mean = random_vec(3, grid.size());
        let mu = GaussianMeasure::new(mean.clone(), c.clone()).unwrap();
        assert!(mu.whiten(&mean).unwrap().iter().all(|x| x.abs() < 1e-14));
        let m = random_vec(4, grid.size());
        let back = mu.unwhiten(&mu.whiten(&m).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&m) {
            assert!((a - b).abs() < 1e-8 * crate::math::norm(&m));
        }
        let ell = build_elliptic_covariance(grid, 0.1, 0.5).unwrap();
        let mut e = vec![0.0; grid.size()];
        e[17] = 1.0;
        let direct = ell.solve_operator(&e);
        let centered = GaussianMeasure::centered(c);
        let u = centered.unwhiten(&e).unwrap();
        let s = ell.noise_variance().sqrt();
        for (a, b) in u.iter().zip(&direct) {
            assert!((a - s * b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let grid = Grid::new(1, 16).unwrap();
        let c: Arc<dyn Covariance> = Arc::new(build_elliptic_covariance(grid, 0.05, 1.0).unwrap());
        let mu = GaussianMeasure::centered(c.clone());
        let a = mu.sample(11, 3).unwrap();
        let b = mu.sample(11, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, mu.sample(12, 3).unwrap());

        let m = 40_000;
        let draws = mu.sample(5, m).unwrap();
        let dense = densify(16, |x| c.apply(x));
        for k in [0, 5, 15] {
            let sd = dense[(k, k)].sqrt();
            let mean: f64 = draws.iter().map(|d| d[k]).sum::<f64>() / m as f64;
            assert!(mean.abs() < 3.0 * sd / (m as f64).sqrt() * 1.5);
            let var: f64 = draws.iter().map(|d| d[k] * d[k]).sum::<f64>() / m as f64;
            // sd of the variance estimator is sqrt(2) var / sqrt(m)
            assert!(rel(var, dense[(k, k)]) < 4.0 * 2f64.sqrt() / (m as f64).sqrt());
        }
        let w: Vec<Vec<f64>> = draws.iter().take(20_000).map(|d| mu.whiten(d).unwrap()).collect();
        for (i, j) in [(0, 0), (3, 3), (0, 1), (4, 9)] {
            let e: f64 = w.iter().map(|v| v[i] * v[j]).sum::<f64>() / w.len() as f64;
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((e - target).abs() < 5.0 * 1.5 / (w.len() as f64).sqrt());
        }
    }

    #[test]
    fn dense_covariance_operations() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let c = DenseCovariance::new(a.clone()).unwrap();
        let x = [0.3, -1.2];
        let y = c.apply_inv(&c.apply(&x));
        assert!((y[0] - x[0]).abs() < 1e-14 && (y[1] - x[1]).abs() < 1e-14);
        let z = c.apply_sqrt(&c.apply_inv_sqrt(&x));
        assert!((z[0] - x[0]).abs() < 1e-14 && (z[1] - x[1]).abs() < 1e-14);
        let kl = c.kle(2).unwrap();
        assert!(rel(kl.values().iter().sum::<f64>(), 3.0) < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let grid = Grid::new(2, 200).unwrap();
        assert!(matches!(
            build_elliptic_covariance(grid, 1.0, 1.0),
            Err(Error::SizeCap { n: 40_000, .. })
        ));
        assert!(Grid::new(3, 4).is_err());
        let c = build_elliptic_covariance(Grid::new(1, 8).unwrap(), 1.0, 1.0).unwrap();
        assert!(matches!(c.kle(0), Err(Error::RankOutOfBounds { .. })));
        assert!(matches!(c.kle(9), Err(Error::RankOutOfBounds { .. })));
    }
}

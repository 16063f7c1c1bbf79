//! Linear and low-rank quadratic Taylor surrogates at Gaussian means.
//!
//! The quadratic surrogate keeps the leading eigenpairs of the generalized
//! problem `D^2 Q phi = lambda C^{-1} phi`, with `phi_j` orthonormal in the
//! `C^{-1}` inner product. In the coordinates `y_j = <C^{-1} phi_j, m - mean>`,
//! which are i.i.d. standard normal, the surrogate reads
//!
//! ```text
//! Q0 + sqrt(<g, C g> - sum <g, phi_j>^2) y_0 + sum (<g, phi_j> y_j + lambda_j y_j^2 / 2)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::dot;
use crate::measure::GaussianMeasure;
use crate::mixture::GaussianMixtureApprox;
use crate::model::{QoIModel, SolveCounter};
use crate::rng;

/// Default oversampling of the randomized eigensolver.
pub const DEFAULT_OVERSAMPLING: usize = 20;

/// Residual variances above this negative threshold (relative to
/// `max(1, <g, C g>)`) are rounding and clamp to zero.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Order {
    Linear,
    Quadratic,
}

/// Surrogate of `Q` around the mean of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaylorSurrogate {
    pub order: Order,
    pub anchor: Vec<f64>,
    pub q0: f64,
    pub gradient: Vec<f64>,
    /// Signed eigenvalues, by descending magnitude.
    pub eigenvalues: Vec<f64>,
    /// `C^{-1}`-orthonormal eigenvectors.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `C^{-1} phi_j`, the coordinate functionals.
    pub dual_vectors: Vec<Vec<f64>>,
    /// `<g, C g>`
    pub g_cg: f64,
    /// `<g, phi_j>`
    pub g_phi: Vec<f64>,
    pub oversampling: usize,
    /// Solves spent building this surrogate.
    pub solves: SolveCounter,
}

impl TaylorSurrogate {
    /// Surrogate that is constant `q0`.
    pub fn constant(anchor: Vec<f64>, q0: f64) -> Self {
        let n = anchor.len();
        Self {
            order: Order::Linear,
            anchor,
            q0,
            gradient: vec![0.0; n],
            eigenvalues: Vec::new(),
            eigenvectors: Vec::new(),
            dual_vectors: Vec::new(),
            g_cg: 0.0,
            g_phi: Vec::new(),
            oversampling: 0,
            solves: SolveCounter::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `sum lambda_j`, the truncated trace of the preconditioned Hessian.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `sum lambda_j^2`
    pub fn trace_squared(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l * l).sum()
    }

    /// Surrogate value at `m`.
    pub fn evaluate(&self, m: &[f64]) -> f64 {
        let d: Vec<f64> = m.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        let mut q = self.q0 + dot(&self.gradient, &d);
        if self.order == Order::Quadratic {
            for (l, z) in self.eigenvalues.iter().zip(&self.dual_vectors) {
                let y = dot(z, &d);
                q += 0.5 * l * y * y;
            }
        }
        q
    }

    /// `<g, C g> - sum <g, phi_j>^2` and whether it was clamped from a
    /// slightly negative value.
    pub fn residual_variance(&self) -> Result<(f64, bool)> {
        let captured: f64 = match self.order {
            Order::Linear => 0.0,
            Order::Quadratic => self.g_phi.iter().map(|x| x * x).sum(),
        };
        let r = self.g_cg - captured;
        if r >= 0.0 {
            Ok((r, false))
        } else if r >= -NEGATIVE_VARIANCE_TOL * self.g_cg.max(1.0) {
            Ok((0.0, true))
        } else {
            Err(Error::NegativeVariance(r))
        }
    }
}

/// Mean of the surrogate under its Gaussian.
pub fn surrogate_mean(s: &TaylorSurrogate) -> f64 {
    match s.order {
        Order::Linear => s.q0,
        Order::Quadratic => s.q0 + 0.5 * s.trace(),
    }
}

/// Second moment of the surrogate under its Gaussian.
pub fn surrogate_second_moment(s: &TaylorSurrogate) -> f64 {
    let mean = surrogate_mean(s);
    match s.order {
        Order::Linear => mean * mean + s.g_cg,
        Order::Quadratic => mean * mean + s.g_cg + 0.5 * s.trace_squared(),
    }
}

/// Variance of the surrogate under its Gaussian.
pub fn surrogate_variance(s: &TaylorSurrogate) -> f64 {
    match s.order {
        Order::Linear => s.g_cg,
        Order::Quadratic => s.g_cg + 0.5 * s.trace_squared(),
    }
}

/// Draws of the surrogate from a caller-provided stream, using `rank + 1`
/// standard normals per draw and no covariance applications.
pub fn sample_surrogate_with(s: &TaylorSurrogate, r: &mut rng::Rng, count: usize) -> Result<Vec<f64>> {
    let (resid, _) = s.residual_variance()?;
    let sd = resid.sqrt();
    let quadratic = s.order == Order::Quadratic;
    let k = if quadratic { s.rank() } else { 0 };
    let mut y = vec![0.0; k + 1];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        rng::fill_standard_normal(r, &mut y);
        let mut q = s.q0 + sd * y[0];
        for j in 0..k {
            let yj = y[j + 1];
            q += s.g_phi[j] * yj + 0.5 * s.eigenvalues[j] * yj * yj;
        }
        out.push(q);
    }
    Ok(out)
}

/// `count` draws of a surrogate for `seed`.
pub fn sample_lowrank_quadratic(s: &TaylorSurrogate, seed: u64, count: usize) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, rng::SURROGATE_SAMPLER_BASE);
    sample_surrogate_with(s, &mut r, count)
}

/// First-order surrogate at the mean of `measure`.
pub fn build_linear<M: QoIModel + ?Sized>(model: &mut M, measure: &GaussianMeasure) -> Result<TaylorSurrogate> {
    let before = model.counter();
    let anchor = measure.mean().to_vec();
    let (q0, gradient) = model.gradient(&anchor)?;
    let g_cg = dot(&gradient, &measure.covariance().apply(&gradient));
    Ok(TaylorSurrogate {
        order: Order::Linear,
        anchor,
        q0,
        gradient,
        eigenvalues: Vec::new(),
        eigenvectors: Vec::new(),
        dual_vectors: Vec::new(),
        g_cg,
        g_phi: Vec::new(),
        oversampling: 0,
        solves: model.counter().since(&before),
    })
}

/// Generalized eigenpairs of `D^2 Q(m)` against `C^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhepResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// `C^{-1} phi_j`
    pub dual_vectors: Vec<Vec<f64>>,
}

/// Randomized double-pass solver for `H phi = lambda C^{-1} phi` using
/// `2 (rank + oversampling)` Hessian actions.
pub fn randomized_ghep<M: QoIModel + ?Sized>(
    model: &mut M,
    measure: &GaussianMeasure,
    rank: usize,
    oversampling: usize,
    seed: u64,
) -> Result<GhepResult> {
    let n = measure.dim();
    let k = rank + oversampling;
    if rank == 0 || k > n {
        return Err(Error::RankOutOfBounds { rank: k, dim: n });
    }
    let c = measure.covariance();
    let m = measure.mean();

    // first pass: Y = C H Omega
    let mut r = rng::stream(seed, rng::EIGEN_BASE);
    let mut omega = vec![0.0; n];
    let mut y = DMatrix::<f64>::zeros(n, k);
    for j in 0..k {
        rng::fill_standard_normal(&mut r, &mut omega);
        let h = model.hessvec(m, &omega)?;
        y.column_mut(j).copy_from_slice(&c.apply(&h));
    }

    // C^{-1}-orthonormal basis by Euclidean QR followed by two CholQR sweeps
    let mut q = y.qr().q();
    let mut bq = DMatrix::<f64>::zeros(n, k);
    for _ in 0..2 {
        for j in 0..k {
            let col: Vec<f64> = q.column(j).iter().copied().collect();
            bq.column_mut(j).copy_from_slice(&c.apply_inv(&col));
        }
        let t = q.transpose() * &bq;
        let t = 0.5 * (&t + t.transpose());
        let chol = t
            .cholesky()
            .ok_or(Error::EigensolverBreakdown("basis Gram matrix is not positive definite"))?;
        let l = chol.l();
        // Q <- Q L^{-T}, BQ <- BQ L^{-T}
        q = l
            .solve_lower_triangular(&q.transpose())
            .ok_or(Error::EigensolverBreakdown("singular triangular factor"))?
            .transpose();
        bq = l
            .solve_lower_triangular(&bq.transpose())
            .ok_or(Error::EigensolverBreakdown("singular triangular factor"))?
            .transpose();
    }

    // second pass: T = Q^T H Q
    let mut hq = DMatrix::<f64>::zeros(n, k);
    for j in 0..k {
        let col: Vec<f64> = q.column(j).iter().copied().collect();
        hq.column_mut(j).copy_from_slice(&model.hessvec(m, &col)?);
    }
    let t = q.transpose() * hq;
    let t = 0.5 * (&t + t.transpose());
    let eig = t.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigensolverBreakdown("non-finite eigenvalue"));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    let v = &q * &eig.eigenvectors;
    let bv = &bq * &eig.eigenvectors;
    let pick = |mat: &DMatrix<f64>| -> Vec<Vec<f64>> {
        order[..rank].iter().map(|&j| mat.column(j).iter().copied().collect()).collect()
    };
    Ok(GhepResult {
        values: order[..rank].iter().map(|&j| eig.eigenvalues[j]).collect(),
        vectors: pick(&v),
        dual_vectors: pick(&bv),
    })
}

/// Second-order surrogate at the mean of `measure` with `rank` eigenpairs.
pub fn build_quadratic<M: QoIModel + ?Sized>(
    model: &mut M,
    measure: &GaussianMeasure,
    rank: usize,
    oversampling: usize,
    seed: u64,
) -> Result<TaylorSurrogate> {
    let n = measure.dim();
    if rank == 0 || rank + oversampling > n {
        return Err(Error::RankOutOfBounds {
            rank: rank + oversampling,
            dim: n,
        });
    }
    let before = model.counter();
    let mut s = build_linear(model, measure)?;
    let ghep = randomized_ghep(model, measure, rank, oversampling, seed)?;
    s.order = Order::Quadratic;
    s.g_phi = ghep.vectors.iter().map(|v| dot(&s.gradient, v)).collect();
    s.eigenvalues = ghep.values;
    s.eigenvectors = ghep.vectors;
    s.dual_vectors = ghep.dual_vectors;
    s.oversampling = oversampling;
    s.solves = model.counter().since(&before);
    Ok(s)
}

/// Surrogate settings shared by all mixture components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    pub order: Order,
    pub rank: usize,
    pub oversampling: usize,
    pub seed: u64,
}

/// Build the surrogate for one Gaussian.
pub fn build_surrogate<M: QoIModel + ?Sized>(
    model: &mut M,
    measure: &GaussianMeasure,
    spec: &SurrogateSpec,
) -> Result<TaylorSurrogate> {
    match spec.order {
        Order::Linear => build_linear(model, measure),
        Order::Quadratic => build_quadratic(model, measure, spec.rank, spec.oversampling, spec.seed),
    }
}

/// One surrogate per mixture component, in component order.
///
/// Components anchored at the base mean are built first so that a model
/// already linearized there reuses its state and adjoint.
pub fn mixture_surrogates<M: QoIModel + ?Sized>(
    model: &mut M,
    mix: &GaussianMixtureApprox,
    spec: &SurrogateSpec,
) -> Result<Vec<TaylorSurrogate>> {
    let base = mix.base().mean();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by_key(|&i| mix.components()[i].mean() != base);
    let mut out: Vec<Option<TaylorSurrogate>> = vec![None; mix.len()];
    let mut failures = Vec::new();
    for i in order {
        match build_surrogate(model, mix.components()[i].measure(), spec) {
            Ok(s) => out[i] = Some(s),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        failures.sort_by_key(|f| f.0);
        return Err(Error::ComponentFailures(failures));
    }
    Ok(out.into_iter().map(|s| s.expect("built")).collect())
}

/// Dominant generalized Hessian eigenvector at the mean of `measure`.
pub fn hep_direction<M: QoIModel + ?Sized>(
    model: &mut M,
    measure: &GaussianMeasure,
    oversampling: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let oversampling = oversampling.min(measure.dim() - 1);
    let g = randomized_ghep(model, measure, 1, oversampling, seed)?;
    let mut v = g.vectors.into_iter().next().expect("rank one");
    let l = g.values[0];
    // fix the sign for reproducible output
    if let Some(big) = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok((l, v))
}

//! Gaussian-mixture approximations of a Gaussian measure built from 1D splits.
//!
//! Splitting `N(m, C)` along a direction `psi` with a 1D split `(w_i, mu_i,
//! sigma)` gives components
//!
//! ```text
//! m_i = m + mu_i sqrt(lambda) psi,   C_i = C + (sigma^2 - 1) lambda psi psi^T
//! ```
//!
//! with `lambda = <psi, C^{-1} psi>^{-1}` for unit `psi`. Component
//! covariances are never materialized: each is a chain of rank-one updates of
//! the base operator, shared by every component of the same split.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::math::{axpy, dot, norm};
use crate::measure::{Covariance, GaussianMeasure, KLBasis};
use crate::quadrature::integrate_pieces;
use crate::rng;
use crate::split1d::Split1D;

/// Directions with `lambda_psi` below this fraction of the leading covariance
/// eigenvalue are rejected as numerically outside the range of `C`.
pub const DIRECTION_CONDITION: f64 = 1e-14;

/// Default cap on the number of tensor-product components.
pub const DEFAULT_TENSOR_CAP: usize = 4096;

/// `C + (sigma^2 - 1) lambda psi psi^T` for a unit `psi` with
/// `lambda = <psi, C^{-1} psi>^{-1}`.
///
/// With `C = L L^T` and `phi = sqrt(lambda) L^{-1} psi` (a unit vector), the
/// update factors as `L (I + (sigma - 1) phi phi^T)`, which gives the square
/// root and its inverse without touching `L^T`.
#[derive(Debug, Clone)]
pub struct RankOneCovariance {
    parent: Arc<dyn Covariance>,
    psi: Vec<f64>,
    lambda: f64,
    sigma: f64,
    /// `C^{-1} psi`
    z: Vec<f64>,
    phi: Vec<f64>,
    trace: f64,
}

impl RankOneCovariance {
    /// `psi` must be unit length.
    pub fn new(parent: Arc<dyn Covariance>, psi: Vec<f64>, sigma: f64) -> Result<Self> {
        if psi.len() != parent.dim() {
            return Err(Error::DimensionMismatch {
                expected: parent.dim(),
                got: psi.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        let z = parent.apply_inv(&psi);
        let lambda = 1.0 / dot(&psi, &z);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::IllConditionedDirection { lambda_psi: lambda });
        }
        let mut phi = parent.apply_inv_sqrt(&psi);
        crate::math::scale(lambda.sqrt(), &mut phi);
        let trace = parent.trace() + (sigma * sigma - 1.0) * lambda;
        Ok(Self {
            parent,
            psi,
            lambda,
            sigma,
            z,
            phi,
            trace,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn direction(&self) -> &[f64] {
        &self.psi
    }

    pub fn parent(&self) -> &Arc<dyn Covariance> {
        &self.parent
    }
}

impl Covariance for RankOneCovariance {
    fn dim(&self) -> usize {
        self.psi.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.parent.apply(x);
        let c = (self.sigma * self.sigma - 1.0) * self.lambda * dot(&self.psi, x);
        axpy(c, &self.psi, &mut y);
        y
    }

    fn apply_inv(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.parent.apply_inv(x);
        let c = (1.0 / (self.sigma * self.sigma) - 1.0) * self.lambda * dot(&self.z, x);
        axpy(c, &self.z, &mut y);
        y
    }

    fn apply_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        axpy((self.sigma - 1.0) * dot(&self.phi, x), &self.phi, &mut v);
        self.parent.apply_sqrt(&v)
    }

    fn apply_inv_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.parent.apply_inv_sqrt(x);
        let c = (1.0 / self.sigma - 1.0) * dot(&self.phi, &v);
        axpy(c, &self.phi, &mut v);
        v
    }

    fn trace(&self) -> f64 {
        self.trace
    }
}

/// One rank-one refinement applied to a component.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComponentUpdate {
    /// Unit direction.
    pub direction: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// `w_i N(m_i, C_i)`.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    weight: f64,
    measure: GaussianMeasure,
    updates: Vec<ComponentUpdate>,
}

impl MixtureComponent {
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        self.measure.mean()
    }

    pub fn covariance(&self) -> &Arc<dyn Covariance> {
        self.measure.covariance()
    }

    pub fn measure(&self) -> &GaussianMeasure {
        &self.measure
    }

    /// Rank-one updates relative to the base measure, oldest first.
    pub fn updates(&self) -> &[ComponentUpdate] {
        &self.updates
    }

    /// Draw number `index` for `seed`.
    pub fn sample_indexed(&self, seed: u64, index: u64) -> Vec<f64> {
        self.measure.sample_indexed(seed, index)
    }

    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        self.measure.sample(seed, count)
    }
}

/// What a construction step did.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Step {
    Kle { mode: usize, n: usize, p: f64, tv: f64 },
    Direction { label: String, n: usize, p: f64, tv: f64 },
    Tensor { modes: Vec<usize>, sizes: Vec<usize>, tv: f64 },
    Recursive { component: usize, weight: f64, label: String, n: usize, p: f64, tv: f64 },
}

/// `sum_i w_i N(m_i, C_i)` approximating a base Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianMixtureApprox {
    base: GaussianMeasure,
    components: Vec<MixtureComponent>,
    tv_bound: f64,
    provenance: Vec<Step>,
}

impl GaussianMixtureApprox {
    /// The base measure as a one-component mixture.
    pub fn identity(base: GaussianMeasure) -> Self {
        Self {
            components: vec![MixtureComponent {
                weight: 1.0,
                measure: base.clone(),
                updates: Vec::new(),
            }],
            base,
            tv_bound: 0.0,
            provenance: Vec::new(),
        }
    }

    pub fn base(&self) -> &GaussianMeasure {
        &self.base
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Accumulated TV error bound against the base measure.
    pub fn tv_bound(&self) -> f64 {
        self.tv_bound
    }

    pub fn provenance(&self) -> &[Step] {
        &self.provenance
    }

    /// Sample from the mixture: component chosen by weight, then drawn.
    pub fn sample_indexed(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, rng::MEASURE_BASE + index);
        self.sample_with(&mut r)
    }

    /// Draw using a caller-provided stream.
    pub fn sample_with(&self, r: &mut rng::Rng) -> Vec<f64> {
        use rand::Rng as _;
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].measure.sample_with(r)
    }
}

fn unit(psi: &[f64]) -> Result<Vec<f64>> {
    let nrm = norm(psi);
    if !(nrm > 0.0) {
        return Err(Error::ZeroDirection);
    }
    if !nrm.is_finite() {
        return Err(Error::NonFinite("direction"));
    }
    Ok(psi.iter().map(|x| x / nrm).collect())
}

/// Split one Gaussian along a unit direction whose `lambda` is known.
fn split_measure(
    measure: &GaussianMeasure,
    updates: &[ComponentUpdate],
    weight: f64,
    psi: &[f64],
    lambda: f64,
    split: &Split1D,
) -> Result<Vec<MixtureComponent>> {
    if split.is_identity() {
        return Ok(vec![MixtureComponent {
            weight,
            measure: measure.clone(),
            updates: updates.to_vec(),
        }]);
    }
    let sigma = split.sigma();
    let cov: Arc<dyn Covariance> = if sigma == 1.0 {
        measure.covariance().clone()
    } else {
        let r = RankOneCovariance::new(measure.covariance().clone(), psi.to_vec(), sigma)?;
        Arc::new(r)
    };
    let root = lambda.sqrt();
    let mut out = Vec::with_capacity(split.len());
    for (w, mu) in split.weights().iter().zip(split.means()) {
        let mut mean = measure.mean().to_vec();
        axpy(mu * root, psi, &mut mean);
        let mut ups = updates.to_vec();
        ups.push(ComponentUpdate {
            direction: psi.to_vec(),
            lambda,
            mu: *mu,
            sigma,
        });
        out.push(MixtureComponent {
            weight: weight * w,
            measure: GaussianMeasure::new(mean, cov.clone())?,
            updates: ups,
        });
    }
    Ok(out)
}

/// `lambda_psi` of a unit direction, validated against the leading eigenvalue.
fn direction_lambda(cov: &dyn Covariance, psi: &[f64]) -> Result<f64> {
    let z = cov.apply_inv(psi);
    let lambda = 1.0 / dot(psi, &z);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::IllConditionedDirection { lambda_psi: lambda });
    }
    // lambda_1 <= tr(C), so this settles most directions without an eigensolve.
    if lambda < DIRECTION_CONDITION * cov.trace() {
        let lambda_1 = match cov.kle(1) {
            Ok(kl) => kl.values()[0],
            Err(_) => cov.trace(),
        };
        if lambda < DIRECTION_CONDITION * lambda_1 {
            return Err(Error::IllConditionedDirection { lambda_psi: lambda });
        }
    }
    Ok(lambda)
}

/// Split along KLE mode `mode` (zero-based).
pub fn split_along_kle(
    measure: &GaussianMeasure,
    kle: &KLBasis,
    mode: usize,
    split: &Split1D,
) -> Result<GaussianMixtureApprox> {
    let (lambda, phi) = kle.mode(mode)?;
    if phi.len() != measure.dim() {
        return Err(Error::DimensionMismatch {
            expected: measure.dim(),
            got: phi.len(),
        });
    }
    let psi = unit(phi)?;
    let components = split_measure(measure, &[], 1.0, &psi, lambda, split)?;
    Ok(GaussianMixtureApprox {
        base: measure.clone(),
        components,
        tv_bound: split.tv_error(),
        provenance: vec![Step::Kle {
            mode,
            n: split.len(),
            p: split.p(),
            tv: split.tv_error(),
        }],
    })
}

/// Split along an arbitrary nonzero direction in the range of `C`.
pub fn split_along_direction(
    measure: &GaussianMeasure,
    psi: &[f64],
    split: &Split1D,
) -> Result<GaussianMixtureApprox> {
    split_along_direction_labeled(measure, psi, split, "direction")
}

/// [`split_along_direction`] with a label recorded in the provenance.
pub fn split_along_direction_labeled(
    measure: &GaussianMeasure,
    psi: &[f64],
    split: &Split1D,
    label: &str,
) -> Result<GaussianMixtureApprox> {
    if psi.len() != measure.dim() {
        return Err(Error::DimensionMismatch {
            expected: measure.dim(),
            got: psi.len(),
        });
    }
    let psi = unit(psi)?;
    let lambda = direction_lambda(measure.covariance().as_ref(), &psi)?;
    let components = split_measure(measure, &[], 1.0, &psi, lambda, split)?;
    Ok(GaussianMixtureApprox {
        base: measure.clone(),
        components,
        tv_bound: split.tv_error(),
        provenance: vec![Step::Direction {
            label: label.into(),
            n: split.len(),
            p: split.p(),
            tv: split.tv_error(),
        }],
    })
}

/// Tensor product of 1D splits along distinct KLE modes.
pub fn tensor_split(
    measure: &GaussianMeasure,
    kle: &KLBasis,
    modes: &[usize],
    splits: &[Split1D],
    cap: usize,
) -> Result<GaussianMixtureApprox> {
    if modes.len() != splits.len() {
        return Err(Error::DimensionMismatch {
            expected: modes.len(),
            got: splits.len(),
        });
    }
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(Error::DuplicateMode(*m));
        }
    }
    let size = splits
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
        .unwrap_or(usize::MAX);
    if size > cap {
        return Err(Error::TensorCap { size, cap });
    }
    let mut mix = GaussianMixtureApprox::identity(measure.clone());
    for (&mode, split) in modes.iter().zip(splits) {
        let (_, phi) = kle.mode(mode)?;
        let psi = unit(phi)?;
        let mut next = Vec::with_capacity(mix.components.len() * split.len());
        for c in &mix.components {
            // Earlier updates act on orthogonal modes, so lambda is unchanged
            // up to rounding; recompute it against the current covariance.
            let lambda = direction_lambda(c.covariance().as_ref(), &psi)?;
            next.extend(split_measure(&c.measure, &c.updates, c.weight, &psi, lambda, split)?);
        }
        mix.components = next;
    }
    let tv = splits.iter().map(|s| s.tv_error()).sum();
    mix.tv_bound = tv;
    mix.provenance.push(Step::Tensor {
        modes: modes.to_vec(),
        sizes: splits.iter().map(|s| s.len()).collect(),
        tv,
    });
    Ok(mix)
}

/// Replace component `j` by its split along `psi`, with `lambda` taken
/// against that component's covariance.
pub fn recursive_split(
    mix: &GaussianMixtureApprox,
    j: usize,
    psi: &[f64],
    split: &Split1D,
) -> Result<GaussianMixtureApprox> {
    recursive_split_labeled(mix, j, psi, split, "direction")
}

/// [`recursive_split`] with a label recorded in the provenance.
pub fn recursive_split_labeled(
    mix: &GaussianMixtureApprox,
    j: usize,
    psi: &[f64],
    split: &Split1D,
    label: &str,
) -> Result<GaussianMixtureApprox> {
    let c = mix.components.get(j).ok_or(Error::IndexOutOfRange {
        index: j,
        len: mix.components.len(),
    })?;
    if psi.len() != mix.base.dim() {
        return Err(Error::DimensionMismatch {
            expected: mix.base.dim(),
            got: psi.len(),
        });
    }
    let psi = unit(psi)?;
    let lambda = direction_lambda(c.covariance().as_ref(), &psi)?;
    let children = split_measure(&c.measure, &c.updates, c.weight, &psi, lambda, split)?;
    let mut components = Vec::with_capacity(mix.components.len() + children.len() - 1);
    components.extend_from_slice(&mix.components[..j]);
    components.extend(children);
    components.extend_from_slice(&mix.components[j + 1..]);
    let mut provenance = mix.provenance.clone();
    provenance.push(Step::Recursive {
        component: j,
        weight: c.weight,
        label: label.into(),
        n: split.len(),
        p: split.p(),
        tv: split.tv_error(),
    });
    Ok(GaussianMixtureApprox {
        base: mix.base.clone(),
        components,
        tv_bound: mix.tv_bound + c.weight * split.tv_error(),
        provenance,
    })
}

/// Weighted two-dimensional Gaussian mixture density.
#[derive(Debug, Clone, PartialEq)]
pub struct Density2D {
    parts: Vec<Part2D>,
}

#[derive(Debug, Clone, PartialEq)]
struct Part2D {
    weight: f64,
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    prec: Matrix2<f64>,
    norm: f64,
}

impl Density2D {
    /// From `(weight, mean, covariance)` triples.
    pub fn new(parts: &[(f64, [f64; 2], [[f64; 2]; 2])]) -> Result<Self> {
        let parts = parts
            .iter()
            .map(|(w, m, c)| {
                let cov = Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]);
                let det = cov.determinant();
                let prec = cov
                    .try_inverse()
                    .filter(|_| det > 0.0)
                    .ok_or_else(|| Error::invalid("covariance", "must be positive definite"))?;
                Ok(Part2D {
                    weight: *w,
                    mean: Vector2::new(m[0], m[1]),
                    cov,
                    prec,
                    norm: 1.0 / (2.0 * core::f64::consts::PI * det.sqrt()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { parts })
    }

    pub fn from_measure(m: &GaussianMeasure) -> Result<Self> {
        Self::from_parts_of(&[(1.0, m)])
    }

    pub fn from_mixture(mix: &GaussianMixtureApprox) -> Result<Self> {
        let items: Vec<(f64, &GaussianMeasure)> =
            mix.components.iter().map(|c| (c.weight, &c.measure)).collect();
        Self::from_parts_of(&items)
    }

    fn from_parts_of(items: &[(f64, &GaussianMeasure)]) -> Result<Self> {
        let mut parts = Vec::with_capacity(items.len());
        for (w, m) in items {
            if m.dim() != 2 {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    got: m.dim(),
                });
            }
            let c0 = m.covariance().apply(&[1.0, 0.0]);
            let c1 = m.covariance().apply(&[0.0, 1.0]);
            let off = 0.5 * (c0[1] + c1[0]);
            parts.push((*w, [m.mean()[0], m.mean()[1]], [[c0[0], off], [off, c1[1]]]));
        }
        Self::new(&parts)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.parts
            .iter()
            .map(|p| {
                let d = Vector2::new(x, y) - p.mean;
                p.weight * p.norm * (-0.5 * d.dot(&(p.prec * d))).exp()
            })
            .sum()
    }

    fn bounds(&self, axis: usize, width: f64) -> (f64, f64) {
        self.parts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let sd = p.cov[(axis, axis)].sqrt();
            (lo.min(p.mean[axis] - width * sd), hi.max(p.mean[axis] + width * sd))
        })
    }
}

/// Absolute tolerance of [`tv_numeric_2d`].
pub const TV2D_TOL: f64 = 2e-4;

/// `1/2 int |pi_A - pi_B|` over a box of ten standard deviations around
/// every component of either density, by nested adaptive quadrature.
pub fn tv_numeric_2d(a: &Density2D, b: &Density2D) -> Result<f64> {
    let width = 10.0;
    let (ax0, ax1) = a.bounds(0, width);
    let (bx0, bx1) = b.bounds(0, width);
    let (ay0, ay1) = a.bounds(1, width);
    let (by0, by1) = b.bounds(1, width);
    let (x0, x1) = (ax0.min(bx0), ax1.max(bx1));
    let (y0, y1) = (ay0.min(by0), ay1.max(by1));
    let pieces = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect()
    };
    let xs = pieces(x0, x1, 32);
    let ys = pieces(y0, y1, 32);
    let inner_tol = 0.1 * TV2D_TOL / (x1 - x0);
    let mut failure = None;
    let outer = integrate_pieces(
        |x| {
            match integrate_pieces(|y| (a.eval(x, y) - b.eval(x, y)).abs(), &ys, inner_tol, 4000) {
                Ok(r) => r.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        &xs,
        0.5 * TV2D_TOL,
        4000,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(0.5 * outer.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_elliptic_covariance, densify, DenseCovariance, Grid};
    use crate::split1d::optimize_split;
    use nalgebra::{DMatrix, DVector};

    fn base(n_side: usize) -> GaussianMeasure {
        let grid = Grid::new(1, n_side).unwrap();
        GaussianMeasure::centered(Arc::new(build_elliptic_covariance(grid, 0.05, 1.0).unwrap()))
    }

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed, 3);
        let mut v = vec![0.0; n];
        rng::fill_standard_normal(&mut r, &mut v);
        v
    }

    #[test]
    fn rank_one_algebra_matches_dense() {
        let mu = base(20);
        let n = 20;
        let psi = unit(&random_vec(1, n)).unwrap();
        let r = RankOneCovariance::new(mu.covariance().clone(), psi.clone(), 0.4).unwrap();
        let c = densify(n, |x| mu.covariance().apply(x));
        let p = DVector::from_vec(psi.clone());
        let lam = 1.0 / p.dot(&(c.clone().try_inverse().unwrap() * &p));
        assert!((lam - r.lambda()).abs() < 1e-10 * lam);
        let ci = &c + (0.16 - 1.0) * lam * &p * p.transpose();
        let dense = densify(n, |x| r.apply(x));
        assert!((&dense - &ci).norm() < 1e-10 * ci.norm());
        let inv = densify(n, |x| r.apply_inv(x));
        assert!((&inv * &ci - DMatrix::identity(n, n)).norm() < 1e-8);
        let s = densify(n, |x| r.apply_sqrt(x));
        assert!((&s * s.transpose() - &ci).norm() < 1e-10 * ci.norm());
        let si = densify(n, |x| r.apply_inv_sqrt(x));
        assert!((&si * &s - DMatrix::identity(n, n)).norm() < 1e-8);
        assert!((r.trace() - ci.trace()).abs() < 1e-10 * ci.trace());
        assert!(r.trace() <= mu.covariance().trace());
    }

    #[test]
    fn kle_and_direction_splits_agree() {
        let mu = base(24);
        let kl = mu.covariance().kle(5).unwrap();
        let split = optimize_split(3, 0.5).unwrap();
        let a = split_along_kle(&mu, &kl, 2, &split).unwrap();
        let b = split_along_direction(&mu, &kl.vectors()[2], &split).unwrap();
        for (x, y) in a.components().iter().zip(b.components()) {
            assert_eq!(x.weight(), y.weight());
            for (p, q) in x.mean().iter().zip(y.mean()) {
                assert!((p - q).abs() < 1e-9);
            }
            let (la, lb) = (x.updates()[0].lambda, y.updates()[0].lambda);
            assert!((la - lb).abs() < 1e-9 * la);
        }
        // variances along modes
        let lam = kl.values();
        let s2 = split.sigma().powi(2);
        for c in a.components() {
            let v2 = dot(&kl.vectors()[2], &c.covariance().apply(&kl.vectors()[2]));
            let v0 = dot(&kl.vectors()[0], &c.covariance().apply(&kl.vectors()[0]));
            assert!((v2 - s2 * lam[2]).abs() < 1e-10 * lam[2]);
            assert!((v0 - lam[0]).abs() < 1e-10 * lam[0]);
            let tr = c.covariance().trace();
            assert!((tr - (mu.covariance().trace() + (s2 - 1.0) * lam[2])).abs() < 1e-10 * tr);
        }
        assert_eq!(a.tv_bound(), split.tv_error());
    }

    #[test]
    fn identity_split_returns_base() {
        let mu = base(10);
        let kl = mu.covariance().kle(2).unwrap();
        let id = Split1D::identity();
        let m = split_along_kle(&mu, &kl, 0, &id).unwrap();
        assert_eq!(m.len(), 1);
        assert!(Arc::ptr_eq(m.components()[0].covariance(), mu.covariance()));
        let t = tensor_split(&mu, &kl, &[0, 1], &[id.clone(), id.clone()], 100).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.tv_bound(), 0.0);
        let r = recursive_split(&t, 0, &kl.vectors()[1], &id).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.tv_bound(), 0.0);
    }

    #[test]
    fn tensor_product_structure() {
        let mu = base(16);
        let kl = mu.covariance().kle(3).unwrap();
        let s3 = optimize_split(3, 0.5).unwrap();
        let t = tensor_split(&mu, &kl, &[0, 1], &[s3.clone(), s3.clone()], 100).unwrap();
        assert_eq!(t.len(), 9);
        let total: f64 = t.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((t.tv_bound() - 2.0 * s3.tv_error()).abs() < 1e-15);
        assert!(matches!(
            tensor_split(&mu, &kl, &[1, 1], &[s3.clone(), s3.clone()], 100),
            Err(Error::DuplicateMode(1))
        ));
        assert!(matches!(
            tensor_split(&mu, &kl, &[0, 1], &[s3.clone(), s3.clone()], 8),
            Err(Error::TensorCap { size: 9, cap: 8 })
        ));
    }

    #[test]
    fn recursive_bookkeeping_and_weights() {
        let mu = base(16);
        let kl = mu.covariance().kle(3).unwrap();
        let s3 = optimize_split(3, 0.5).unwrap();
        let s5 = optimize_split(5, 0.5).unwrap();
        let m = split_along_kle(&mu, &kl, 0, &s3).unwrap();
        let w1 = m.components()[1].weight();
        let r = recursive_split(&m, 1, &random_vec(9, 16), &s5).unwrap();
        assert_eq!(r.len(), 7);
        assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.tv_bound() - (s3.tv_error() + w1 * s5.tv_error())).abs() < 1e-15);
        assert!(matches!(recursive_split(&m, 3, &random_vec(9, 16), &s5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn direction_validation() {
        let mu = base(8);
        let s3 = optimize_split(3, 0.5).unwrap();
        assert!(matches!(split_along_direction(&mu, &[0.0; 8], &s3), Err(Error::ZeroDirection)));
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-20]);
        let m = GaussianMeasure::centered(Arc::new(DenseCovariance::new(c).unwrap()));
        assert!(matches!(
            split_along_direction(&m, &[0.0, 1.0], &s3),
            Err(Error::IllConditionedDirection { .. })
        ));
    }

    #[test]
    fn component_sampling_moments() {
        let mu = base(6);
        let s3 = optimize_split(3, 0.5).unwrap();
        let psi = unit(&random_vec(4, 6)).unwrap();
        let m = split_along_direction(&mu, &psi, &s3).unwrap();
        let c = &m.components()[2];
        let lam = c.updates()[0].lambda;
        let count = 40_000;
        let draws = c.sample(17, count).unwrap();
        // coordinate along psi dual to the base covariance: lambda <C^{-1} psi, m>
        let z = mu.covariance().apply_inv(&psi);
        let coord = |m: &[f64]| lam * dot(&z, m);
        let proj: Vec<f64> = draws.iter().map(|d| coord(d)).collect();
        let mean: f64 = proj.iter().sum::<f64>() / count as f64;
        let var: f64 = proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        let target_mean = coord(c.mean());
        let target_var = lam * lam * dot(&z, &c.covariance().apply(&z));
        assert!((target_mean - s3.means()[2] * lam.sqrt()).abs() < 1e-10 * lam.sqrt());
        assert!((target_var - s3.sigma().powi(2) * lam).abs() < 1e-10 * lam);
        assert!((mean - target_mean).abs() < 4.0 * (target_var / count as f64).sqrt());
        assert!((var - target_var).abs() < 4.0 * target_var * (2.0 / count as f64).sqrt());
    }

    #[test]
    fn numeric_tv_of_simple_pairs() {
        let a = Density2D::new(&[(1.0, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])]).unwrap();
        let b = Density2D::new(&[(1.0, [5.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])]).unwrap();
        assert!(tv_numeric_2d(&a, &a).unwrap().abs() < 1e-12);
        let tv = tv_numeric_2d(&a, &b).unwrap();
        let exact = 2.0 * crate::math::normal_cdf(2.5) - 1.0;
        assert!((tv - exact).abs() < TV2D_TOL, "{tv} vs {exact}");
    }
}

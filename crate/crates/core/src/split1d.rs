//! One-dimensional Gaussian-mixture approximations of `N(0, 1)`.
//!
//! A split with `N` components uses the shared standard deviation
//! `sigma = N^{-p}`. Weights and means minimize the squared `L^2` distance
//! between the densities, which has a closed form because products of
//! Gaussian densities integrate to a Gaussian density of the mean gap.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math::{gaussian_pdf, normal_pdf};
use crate::quadrature::integrate_pieces;
use crate::rng;

/// Integration window for the 1D total variation.
pub const TV_WINDOW: f64 = 12.0;
/// Absolute tolerance of the 1D total-variation quadrature.
pub const TV_TOL: f64 = 1e-8;

/// Record of how a split was obtained.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitInfo {
    pub method: SplitMethod,
    /// Squared `L^2` misfit of the densities.
    pub objective: f64,
    pub restarts: usize,
    pub best_restart: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SplitMethod {
    Identity,
    Optimized,
    Equispaced,
    External,
}

/// Symmetric Gaussian mixture approximating `N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split1D {
    n: usize,
    p: f64,
    sigma: f64,
    weights: Vec<f64>,
    means: Vec<f64>,
    tv_error: f64,
    info: SplitInfo,
}

impl Split1D {
    /// The trivial split `N(0, 1)` itself.
    pub fn identity() -> Self {
        Self {
            n: 1,
            p: 0.5,
            sigma: 1.0,
            weights: vec![1.0],
            means: vec![0.0],
            tv_error: 0.0,
            info: SplitInfo {
                method: SplitMethod::Identity,
                objective: 0.0,
                restarts: 0,
                best_restart: 0,
                iterations: 0,
                gradient_norm: 0.0,
                seed: 0,
            },
        }
    }

    /// Assemble a split from explicit values, checking its invariants and
    /// computing its TV error.
    pub fn from_parts(p: f64, weights: Vec<f64>, means: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        let objective = l2_objective(&weights, &means, sigma_rule(n.max(1), p));
        let mut s = Self {
            n,
            p,
            sigma: 0.0,
            weights,
            means,
            tv_error: 0.0,
            info: SplitInfo {
                method: SplitMethod::External,
                objective,
                restarts: 0,
                best_restart: 0,
                iterations: 0,
                gradient_norm: f64::NAN,
                seed: 0,
            },
        };
        s.validate_shape()?;
        s.sigma = sigma_rule(n, p);
        s.validate()?;
        s.tv_error = tv_1d(&s)?;
        Ok(s)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "at least one component"));
        }
        if self.means.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: self.means.len(),
            });
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid("p", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Check the weight, ordering, symmetry and standard-deviation invariants.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", "must sum to one"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "must be nonnegative"));
        }
        if self.means.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("means", "must be sorted ascending"));
        }
        let n = self.n;
        for i in 0..n {
            if (self.means[i] + self.means[n - 1 - i]).abs() > 1e-10
                || (self.weights[i] - self.weights[n - 1 - i]).abs() > 1e-10
            {
                return Err(Error::invalid("split", "must be symmetric about zero"));
            }
        }
        if self.sigma != sigma_rule(n, self.p) {
            return Err(Error::invalid("sigma", "must equal N^-p"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn tv_error(&self) -> f64 {
        self.tv_error
    }

    pub fn info(&self) -> &SplitInfo {
        &self.info
    }

    pub fn is_identity(&self) -> bool {
        self.n == 1 && self.sigma == 1.0 && self.means[0] == 0.0
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: f64) -> f64 {
        let var = self.sigma * self.sigma;
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * gaussian_pdf(x - m, var))
            .sum()
    }

    /// Squared `L^2` distance between the mixture and `N(0, 1)` densities.
    pub fn l2_misfit(&self) -> f64 {
        l2_objective(&self.weights, &self.means, self.sigma)
    }
}

/// `N^{-p}`
#[inline]
pub fn sigma_rule(n: usize, p: f64) -> f64 {
    (n as f64).powf(-p)
}

fn check_args(n: usize, p: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "at least one component"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", "must lie in (0, 1)"));
    }
    Ok(())
}

/// `int (pi_0 - sum w_i N(mu_i, sigma^2))^2 dx`
pub fn l2_objective(weights: &[f64], means: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let mut j = gaussian_pdf(0.0, 2.0);
    for (i, (wi, mi)) in weights.iter().zip(means).enumerate() {
        j -= 2.0 * wi * gaussian_pdf(*mi, 1.0 + s2);
        j += wi * wi * gaussian_pdf(0.0, 2.0 * s2);
        for (wj, mj) in weights[i + 1..].iter().zip(&means[i + 1..]) {
            j += 2.0 * wi * wj * gaussian_pdf(mi - mj, 2.0 * s2);
        }
    }
    j
}

/// Equally spaced components on `(-L, L)` with weights proportional to the
/// standard normal density at the means.
pub fn equispaced_split(n: usize, p: f64, half_width: f64) -> Result<Split1D> {
    check_args(n, p)?;
    if !(half_width > 0.0) {
        return Err(Error::invalid("half_width", "must be positive"));
    }
    let l = half_width;
    let nf = n as f64;
    let mut means: Vec<f64> = (1..=n).map(|k| -l - l / nf + 2.0 * l * k as f64 / nf).collect();
    // Exact symmetry despite rounding.
    for i in 0..n / 2 {
        let a = 0.5 * (means[n - 1 - i] - means[i]);
        means[i] = -a;
        means[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        means[n / 2] = 0.0;
    }
    let raw: Vec<f64> = means.iter().map(|m| normal_pdf(*m)).collect();
    let weights = symmetric_normalize(&raw);
    let sigma = sigma_rule(n, p);
    let mut s = Split1D {
        n,
        p,
        sigma,
        info: SplitInfo {
            method: SplitMethod::Equispaced,
            objective: l2_objective(&weights, &means, sigma),
            restarts: 0,
            best_restart: 0,
            iterations: 0,
            gradient_norm: f64::NAN,
            seed: 0,
        },
        weights,
        means,
        tv_error: 0.0,
    };
    s.tv_error = tv_1d(&s)?;
    Ok(s)
}

fn symmetric_normalize(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut w: Vec<f64> = (0..n).map(|i| 0.5 * (raw[i] + raw[n - 1 - i])).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Total variation `1/2 int |pi_0 - pi_mix|` between `N(0,1)` and the split.
pub fn tv_1d(split: &Split1D) -> Result<f64> {
    if split.is_identity() {
        return Ok(0.0);
    }
    let mut breaks: Vec<f64> = Vec::new();
    let pieces = 96;
    for k in 0..=pieces {
        breaks.push(-TV_WINDOW + 2.0 * TV_WINDOW * k as f64 / pieces as f64);
    }
    breaks.extend(split.means.iter().filter(|m| m.abs() < TV_WINDOW));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let r = integrate_pieces(
        |x| (normal_pdf(x) - split.density(x)).abs(),
        &breaks,
        2.0 * TV_TOL,
        20_000,
    )?;
    Ok(0.5 * r.value)
}

/// Options for [`optimize_split_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub gradient_tol: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            seed: 0,
            max_iterations: 5000,
            gradient_tol: 1e-10,
        }
    }
}

/// Optimized split with default options.
pub fn optimize_split(n: usize, p: f64) -> Result<Split1D> {
    optimize_split_with(n, p, &SplitOptions::default())
}

/// Minimize the `L^2` misfit over symmetric means and nonnegative weights.
///
/// Means are optimized by BFGS on the positive half-means; for every mean
/// iterate the weights solve a small constrained quadratic program, and the
/// gradient of the reduced objective follows from the envelope theorem.
pub fn optimize_split_with(n: usize, p: f64, opts: &SplitOptions) -> Result<Split1D> {
    check_args(n, p)?;
    if n == 1 {
        let mut s = Split1D::identity();
        s.p = p;
        s.info.seed = opts.seed;
        return Ok(s);
    }
    let sigma = sigma_rule(n, p);
    let layout = Layout::new(n);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for l in [2.0, 3.0, 4.0] {
        let eq = equispaced_split(n, p, l)?;
        starts.push(layout.half_means(&eq.means));
    }
    let mut r = rng::stream(opts.seed, rng::OPTIMIZER_BASE + n as u64);
    while starts.len() < opts.restarts.max(3) {
        let spread = r.random_range(1.5..4.5);
        let mut a: Vec<f64> = (0..layout.pairs).map(|_| r.random_range(0.02..1.0) * spread).collect();
        a.sort_by(f64::total_cmp);
        starts.push(a);
    }

    let mut best: Option<(Run, usize)> = None;
    let mut any_converged = false;
    for (k, a0) in starts.iter().enumerate() {
        let run = bfgs(&layout, sigma, a0, opts);
        any_converged |= run.converged;
        let better = match &best {
            None => true,
            Some((b, _)) => run.objective < b.objective,
        };
        if better {
            best = Some((run, k));
        }
    }
    let (run, best_restart) = best.expect("at least one restart");
    let (means, weights) = layout.expand(&run.half_means, &run.omega);
    let mut split = Split1D {
        n,
        p,
        sigma,
        weights,
        means,
        tv_error: 0.0,
        info: SplitInfo {
            method: SplitMethod::Optimized,
            objective: run.objective,
            restarts: starts.len(),
            best_restart,
            iterations: run.iterations,
            gradient_norm: run.gradient_norm,
            seed: opts.seed,
        },
    };
    split.tv_error = tv_1d(&split)?;
    if !any_converged {
        return Err(Error::SplitNotConverged {
            n,
            best: Box::new(split),
        });
    }
    Ok(split)
}

/// Symmetric parametrization: `pairs` positive half-means plus an optional
/// center at zero. Reduced weight `omega_k` is the total weight of group `k`.
struct Layout {
    n: usize,
    pairs: usize,
    center: bool,
}

impl Layout {
    fn new(n: usize) -> Self {
        Self {
            n,
            pairs: n / 2,
            center: n % 2 == 1,
        }
    }

    fn groups(&self) -> usize {
        self.pairs + self.center as usize
    }

    fn half_means(&self, means: &[f64]) -> Vec<f64> {
        means[self.n - self.pairs..].to_vec()
    }

    /// Sorted full means and weights.
    fn expand(&self, half: &[f64], omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut items: Vec<(f64, f64)> = Vec::with_capacity(self.n);
        for (a, w) in half.iter().zip(omega) {
            let a = a.abs();
            items.push((-a, 0.5 * w));
            items.push((a, 0.5 * w));
        }
        if self.center {
            items.push((0.0, omega[self.pairs]));
        }
        items.sort_by(|x, y| x.0.total_cmp(&y.0));
        let means: Vec<f64> = items.iter().map(|x| x.0).collect();
        let raw: Vec<f64> = items.iter().map(|x| x.1).collect();
        (means, symmetric_normalize(&raw))
    }

    /// Components as (mean, group, sign) in an unsorted order.
    fn components(&self, half: &[f64]) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::with_capacity(self.n);
        for (k, a) in half.iter().enumerate() {
            out.push((*a, k, 1.0));
            out.push((-a, k, -1.0));
        }
        if self.center {
            out.push((0.0, self.pairs, 0.0));
        }
        out
    }
}

struct Eval {
    objective: f64,
    /// Magnitude of the terms cancelling in `objective`, for noise estimates.
    scale: f64,
    gradient: Vec<f64>,
    omega: Vec<f64>,
}

fn evaluate(layout: &Layout, sigma: f64, half: &[f64], warm: Option<&[f64]>) -> Eval {
    let s2 = sigma * sigma;
    let comps = layout.components(half);
    let g = layout.groups();
    let share = |grp: usize| if layout.center && grp == layout.pairs { 1.0 } else { 0.5 };
    // J(omega) = c - 2 beta^T omega + omega^T Q omega
    let mut q = DMatrix::<f64>::zeros(g, g);
    let mut beta = DVector::<f64>::zeros(g);
    for &(mi, gi, _) in &comps {
        beta[gi] += share(gi) * gaussian_pdf(mi, 1.0 + s2);
        for &(mj, gj, _) in &comps {
            q[(gi, gj)] += share(gi) * share(gj) * gaussian_pdf(mi - mj, 2.0 * s2);
        }
    }
    let omega = simplex_qp(&q, &beta, warm);
    let quad = omega.dot(&(&q * &omega));
    let objective = gaussian_pdf(0.0, 2.0) - 2.0 * beta.dot(&omega) + quad;
    let scale = gaussian_pdf(0.0, 2.0) + 2.0 * beta.dot(&omega).abs() + quad.abs();

    let w: Vec<f64> = comps.iter().map(|c| share(c.1) * omega[c.1]).collect();
    let mut gradient = vec![0.0; layout.pairs];
    for (i, &(mi, gi, sign)) in comps.iter().enumerate() {
        if sign == 0.0 || w[i] == 0.0 {
            continue;
        }
        let mut d = 2.0 * w[i] * mi * gaussian_pdf(mi, 1.0 + s2) / (1.0 + s2);
        for (j, &(mj, _, _)) in comps.iter().enumerate() {
            let x = mi - mj;
            d -= 2.0 * w[i] * w[j] * x / (2.0 * s2) * gaussian_pdf(x, 2.0 * s2);
        }
        gradient[gi] += sign * d;
    }
    Eval {
        objective,
        scale,
        gradient,
        omega: omega.as_slice().to_vec(),
    }
}

/// `min omega^T Q omega - 2 beta^T omega` subject to `sum omega = 1`,
/// `omega >= 0`, by a primal active-set method started from a feasible point.
fn simplex_qp(q: &DMatrix<f64>, beta: &DVector<f64>, warm: Option<&[f64]>) -> DVector<f64> {
    let g = beta.len();
    if g == 1 {
        return DVector::from_element(1, 1.0);
    }
    let ridge = 1e-13 * q.diagonal().max();
    let mut x = match warm {
        Some(w) if w.len() == g && w.iter().all(|v| *v >= 0.0) => {
            let mut v = DVector::from_column_slice(w);
            let s = v.sum();
            v /= s;
            v
        }
        _ => DVector::from_element(g, 1.0 / g as f64),
    };
    let mut free: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    for _ in 0..10 * g + 20 {
        let idx: Vec<usize> = (0..g).filter(|&i| free[i]).collect();
        let f = idx.len();
        // KKT: 2 Q_FF x_F + nu 1 = 2 beta_F, 1^T x_F = 1
        let mut k = DMatrix::<f64>::zeros(f + 1, f + 1);
        let mut rhs = DVector::<f64>::zeros(f + 1);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                k[(a, b)] = 2.0 * q[(i, j)];
            }
            k[(a, a)] += 2.0 * ridge;
            k[(a, f)] = 1.0;
            k[(f, a)] = 1.0;
            rhs[a] = 2.0 * beta[i];
        }
        rhs[f] = 1.0;
        let sol = match k.full_piv_lu().solve(&rhs) {
            Some(s) => s,
            None => break,
        };
        let mut target = DVector::<f64>::zeros(g);
        for (a, &i) in idx.iter().enumerate() {
            target[i] = sol[a];
        }
        let nu = sol[f];
        if idx.iter().all(|&i| target[i] >= 0.0) {
            x = target;
            // multipliers of the inactive bounds
            let grad = 2.0 * (q * &x) - 2.0 * beta;
            let mut worst = None;
            let mut most = -1e-15 * (1.0 + nu.abs());
            for i in (0..g).filter(|&i| !free[i]) {
                let lam = grad[i] + nu;
                if lam < most {
                    most = lam;
                    worst = Some(i);
                }
            }
            match worst {
                Some(i) => free[i] = true,
                None => return x,
            }
        } else {
            // step toward target until a free variable hits zero
            let mut t = 1.0;
            let mut block = None;
            for &i in &idx {
                if target[i] < 0.0 {
                    let ti = x[i] / (x[i] - target[i]);
                    if ti < t {
                        t = ti;
                        block = Some(i);
                    }
                }
            }
            x = &x + t * (&target - &x);
            if let Some(i) = block {
                x[i] = 0.0;
                free[i] = false;
            }
            for &i in &idx {
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    free[i] = false;
                }
            }
        }
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = x.sum();
    x / s
}

struct Run {
    half_means: Vec<f64>,
    omega: Vec<f64>,
    objective: f64,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
}

fn bfgs(layout: &Layout, sigma: f64, a0: &[f64], opts: &SplitOptions) -> Run {
    let m = a0.len();
    let mut a = a0.to_vec();
    let mut e = evaluate(layout, sigma, &a, None);
    let mut hinv = DMatrix::<f64>::identity(m, m);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iterations {
        iterations = it;
        let gn = crate::math::norm(&e.gradient);
        if gn <= opts.gradient_tol {
            converged = true;
            break;
        }
        let g = DVector::from_column_slice(&e.gradient);
        let mut d = -(&hinv * &g);
        let mut slope = d.dot(&g);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(m, m);
            d = -g.clone();
            slope = -g.dot(&g);
        }
        // Armijo backtracking
        let mut t = 1.0;
        let mut accepted = None;
        // The objective is a difference of O(1) terms, so allow for rounding.
        let noise = 64.0 * f64::EPSILON * e.scale * (layout.n as f64);
        for _ in 0..60 {
            let trial: Vec<f64> = a.iter().zip(d.iter()).map(|(x, y)| x + t * y).collect();
            let et = evaluate(layout, sigma, &trial, Some(&e.omega));
            let downhill = d.iter().zip(&et.gradient).map(|(x, y)| x * y).sum::<f64>() <= 0.0;
            if et.objective <= e.objective + 1e-4 * t * slope
                || (et.objective <= e.objective + noise && downhill)
            {
                accepted = Some((trial, et));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, et)) = accepted else {
            // No further decrease is representable: stationary to working precision.
            converged = gn <= 1e-6 * (1.0 + e.objective.abs()) || t * crate::math::norm(d.as_slice()) < 1e-14;
            break;
        };
        let s = DVector::from_iterator(m, trial.iter().zip(&a).map(|(x, y)| x - y));
        let y = DVector::from_iterator(m, et.gradient.iter().zip(&e.gradient).map(|(x, y)| x - y));
        let sy = s.dot(&y);
        let rel_change = (e.objective - et.objective).abs() / e.objective.abs().max(1e-300);
        a = trial;
        e = et;
        if sy > 1e-300 {
            if it == 0 {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(m, m);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        if rel_change < 1e-15 && crate::math::norm(s.as_slice()) < 1e-12 {
            converged = true;
            break;
        }
    }
    Run {
        gradient_norm: crate::math::norm(&e.gradient),
        half_means: a,
        omega: e.omega,
        objective: e.objective,
        iterations,
        converged,
    }
}

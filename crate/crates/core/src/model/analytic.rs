//! `Q(m) = exp(a^T m) + 1/2 m^T B m` with low-rank symmetric `B`.
//!
//! Gaussian moments are available in closed form when one of the two terms
//! vanishes, which makes this model an oracle for the estimators.

use alloc::vec::Vec;

use super::{QoIModel, SolveCounter};
use crate::error::{Error, Result};
use crate::math::{axpy, dot};
use crate::measure::GaussianMeasure;
use crate::mixture::GaussianMixtureApprox;

/// `B = sum_j beta_j b_j b_j^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    a: Vec<f64>,
    beta: Vec<f64>,
    b: Vec<Vec<f64>>,
    counter: SolveCounter,
}

impl AnalyticModel {
    pub fn new(a: Vec<f64>, terms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::invalid("a", "dimension must be positive"));
        }
        let mut beta = Vec::with_capacity(terms.len());
        let mut b = Vec::with_capacity(terms.len());
        for (bj, v) in terms {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
            beta.push(bj);
            b.push(v);
        }
        Ok(Self {
            a,
            beta,
            b,
            counter: SolveCounter::default(),
        })
    }

    /// Pure lognormal map `exp(a^T m)`.
    pub fn lognormal(a: Vec<f64>) -> Result<Self> {
        Self::new(a, Vec::new())
    }

    /// `1 + 1/2 m^T B m`.
    pub fn quadratic(n: usize, terms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        Self::new(alloc::vec![0.0; n], terms)
    }

    pub fn linear_part(&self) -> &[f64] {
        &self.a
    }

    fn has_exp(&self) -> bool {
        self.a.iter().any(|x| *x != 0.0)
    }

    fn has_quadratic(&self) -> bool {
        self.beta.iter().any(|x| *x != 0.0)
    }

    /// `B x`
    pub fn apply_b(&self, x: &[f64]) -> Vec<f64> {
        let mut y = alloc::vec![0.0; x.len()];
        for (bj, v) in self.beta.iter().zip(&self.b) {
            axpy(bj * dot(v, x), v, &mut y);
        }
        y
    }

    /// Exact mean and variance of `Q` under a Gaussian measure.
    pub fn moments(&self, measure: &GaussianMeasure) -> Result<(f64, f64)> {
        if measure.dim() != self.a.len() {
            return Err(Error::DimensionMismatch {
                expected: self.a.len(),
                got: measure.dim(),
            });
        }
        let c = measure.covariance();
        let mbar = measure.mean();
        match (self.has_exp(), self.has_quadratic()) {
            (true, true) => Err(Error::Unsupported(
                "closed-form moments need a = 0 or B = 0; use a Monte Carlo reference",
            )),
            (_, false) => {
                // B = 0: Q = exp(X) with X ~ N(a^T m, a^T C a); also covers a = 0.
                let mu = dot(&self.a, mbar);
                let s2 = dot(&self.a, &c.apply(&self.a));
                let mean = (mu + 0.5 * s2).exp();
                let var = (s2.exp() - 1.0) * (2.0 * mu + s2).exp();
                Ok((mean, var))
            }
            (false, true) => {
                let cb: Vec<Vec<f64>> = self.b.iter().map(|v| c.apply(v)).collect();
                let bm = self.apply_b(mbar);
                let mut mean = 1.0 + 0.5 * dot(mbar, &bm);
                let mut tr_bcbc = 0.0;
                for (j, (bj, cvj)) in self.beta.iter().zip(&cb).enumerate() {
                    mean += 0.5 * bj * dot(&self.b[j], cvj);
                    for (bk, vk) in self.beta.iter().zip(&self.b) {
                        let x = dot(vk, cvj);
                        tr_bcbc += bj * bk * x * x;
                    }
                }
                let var = dot(&bm, &c.apply(&bm)) + 0.5 * tr_bcbc;
                Ok((mean, var))
            }
        }
    }
}

/// Mean and variance of `Q` under a Gaussian mixture from exact component
/// moments.
pub fn mixture_moments(model: &AnalyticModel, mix: &GaussianMixtureApprox) -> Result<(f64, f64)> {
    let mut mean = 0.0;
    let mut second = 0.0;
    for c in mix.components() {
        let (m, v) = model.moments(c.measure())?;
        mean += c.weight() * m;
        second += c.weight() * (v + m * m);
    }
    Ok((mean, second - mean * mean))
}

impl QoIModel for AnalyticModel {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn evaluate(&mut self, m: &[f64]) -> Result<f64> {
        if m.len() != self.a.len() {
            return Err(Error::DimensionMismatch {
                expected: self.a.len(),
                got: m.len(),
            });
        }
        Ok(dot(&self.a, m).exp() + 0.5 * dot(m, &self.apply_b(m)))
    }

    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let q = self.evaluate(m)?;
        let e = dot(&self.a, m).exp();
        let mut g = self.apply_b(m);
        axpy(e, &self.a, &mut g);
        Ok((q, g))
    }

    fn hessvec(&mut self, m: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.a.len() || dir.len() != self.a.len() {
            return Err(Error::DimensionMismatch {
                expected: self.a.len(),
                got: if m.len() != self.a.len() { m.len() } else { dir.len() },
            });
        }
        self.counter.hessian_actions += 1;
        let e = dot(&self.a, m).exp();
        let mut y = self.apply_b(dir);
        axpy(e * dot(&self.a, dir), &self.a, &mut y);
        Ok(y)
    }

    fn counter(&self) -> SolveCounter {
        self.counter
    }
}

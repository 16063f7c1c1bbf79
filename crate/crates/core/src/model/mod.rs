//! Parameter-to-QoI maps with gradients and Hessian actions.

use alloc::vec::Vec;

use crate::error::Result;

mod adr;
mod analytic;

pub use adr::{AdrConfig, AdrModel, Qoi, Source};
pub use analytic::{mixture_moments, AnalyticModel};

/// Tally of linear solves performed by a model.
///
/// `unique_systems` counts distinct operators that were solved with, so a
/// factorization reused by later solves is counted once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveCounter {
    pub state_newton: usize,
    pub adjoint: usize,
    pub incremental_state: usize,
    pub incremental_adjoint: usize,
    pub unique_systems: usize,
    pub hessian_actions: usize,
}

impl SolveCounter {
    /// All linear solves.
    pub fn total(&self) -> usize {
        self.state_newton + self.adjoint + self.incremental_state + self.incremental_adjoint
    }

    pub fn since(&self, earlier: &SolveCounter) -> SolveCounter {
        SolveCounter {
            state_newton: self.state_newton - earlier.state_newton,
            adjoint: self.adjoint - earlier.adjoint,
            incremental_state: self.incremental_state - earlier.incremental_state,
            incremental_adjoint: self.incremental_adjoint - earlier.incremental_adjoint,
            unique_systems: self.unique_systems - earlier.unique_systems,
            hessian_actions: self.hessian_actions - earlier.hessian_actions,
        }
    }

    pub fn add(&mut self, other: &SolveCounter) {
        self.state_newton += other.state_newton;
        self.adjoint += other.adjoint;
        self.incremental_state += other.incremental_state;
        self.incremental_adjoint += other.incremental_adjoint;
        self.unique_systems += other.unique_systems;
        self.hessian_actions += other.hessian_actions;
    }
}

/// Scalar quantity of interest `Q(m)`.
///
/// Methods take `&mut self` so implementations can cache the state and
/// adjoint for the most recent parameter. Concurrent use clones the model.
pub trait QoIModel: Send {
    fn dim(&self) -> usize;

    fn evaluate(&mut self, m: &[f64]) -> Result<f64>;

    /// Value and gradient.
    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hessian action `D^2 Q(m) dir`.
    fn hessvec(&mut self, m: &[f64], dir: &[f64]) -> Result<Vec<f64>>;

    fn counter(&self) -> SolveCounter;
}

/// Central finite-difference checks of a model's derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivativeCheck {
    /// `|<g, d> - FD| / |FD|`
    pub gradient_rel_error: f64,
    /// `|H d - FD of gradient| / |FD|`
    pub hessvec_rel_error: f64,
    /// `|<H d, e> - <d, H e>| / |<H d, e>|`
    pub symmetry_rel_error: f64,
}

/// Compare gradient and Hessian action at `m` with central differences of
/// step `h` along `d`; symmetry uses a second direction `e`.
pub fn check_derivatives<M: QoIModel + ?Sized>(
    model: &mut M,
    m: &[f64],
    d: &[f64],
    e: &[f64],
    h: f64,
) -> Result<DerivativeCheck> {
    use crate::math::{axpy, dot, norm};
    let (_, g) = model.gradient(m)?;
    let hd = model.hessvec(m, d)?;
    let he = model.hessvec(m, e)?;
    let mut mp = m.to_vec();
    axpy(h, d, &mut mp);
    let mut mm = m.to_vec();
    axpy(-h, d, &mut mm);
    let (qp, gp) = model.gradient(&mp)?;
    let (qm, gm) = model.gradient(&mm)?;
    let fd = (qp - qm) / (2.0 * h);
    let gd = dot(&g, d);
    let fd_h: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let diff: Vec<f64> = fd_h.iter().zip(&hd).map(|(a, b)| a - b).collect();
    let a = dot(&hd, e);
    let b = dot(d, &he);
    Ok(DerivativeCheck {
        gradient_rel_error: (gd - fd).abs() / fd.abs().max(f64::MIN_POSITIVE),
        hessvec_rel_error: norm(&diff) / norm(&fd_h).max(f64::MIN_POSITIVE),
        symmetry_rel_error: (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE),
    })
}

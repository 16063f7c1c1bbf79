//! Semilinear advection–diffusion–reaction model on the unit square.
//!
//! ```text
//! -div(e^m grad u) + v . grad u + a u^3 = f   in (0,1)^2
//! u = 0 on x = 0,   zero flux elsewhere
//! ```
//!
//! Finite volumes on the node-centered dual grid: diffusion uses the harmonic
//! mean of `e^m` on each edge, advection is upwinded (west and south for a
//! positive velocity), and reaction and source terms are lumped with the
//! trapezoidal weights. Derivatives are exact for this discrete system.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{QoIModel, SolveCounter};
use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Error, Result};
use crate::math::{dot, norm};
use crate::measure::Grid;

/// Which functional of the state is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Qoi {
    /// `int u^2`
    L2,
    /// `int u^3`
    L3,
    /// `int e^m |grad u|^2`
    Energy,
}

/// Isotropic Gaussian bump.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Source {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

impl Default for Source {
    fn default() -> Self {
        Self {
            center: [0.25, 0.5],
            width: 0.05,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdrConfig {
    /// Grid points per axis.
    pub points: usize,
    pub velocity: [f64; 2],
    pub reaction: f64,
    pub source: Source,
    /// Newton stops once the residual is below this fraction of the source norm.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub qoi: Qoi,
}

impl Default for AdrConfig {
    fn default() -> Self {
        Self {
            points: 32,
            velocity: [0.1, 0.1],
            reaction: 0.01,
            source: Source::default(),
            newton_tol: 1e-10,
            max_newton: 25,
            qoi: Qoi::L2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    k: usize,
    l: usize,
    /// Face-length factor: 1/2 on boundary edges.
    s: f64,
}

#[derive(Debug)]
struct Shared {
    config: AdrConfig,
    grid: Grid,
    edges: Vec<Edge>,
    /// Trapezoidal weights on all nodes.
    weights: Vec<f64>,
    /// Free index of each node, `usize::MAX` on the Dirichlet boundary.
    free_index: Vec<usize>,
    free_nodes: Vec<usize>,
    /// Lumped source `W f` on free nodes.
    load: Vec<f64>,
    load_norm: f64,
}

/// Edge coefficients and their derivatives, all scaled by the face factor.
#[derive(Debug, Clone)]
struct EdgeCoefficients {
    c: Vec<f64>,
    ga: Vec<f64>,
    gb: Vec<f64>,
    haa: Vec<f64>,
    hab: Vec<f64>,
    hbb: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Linearization {
    m: Vec<f64>,
    coef: EdgeCoefficients,
    /// State on all nodes (zero on the Dirichlet boundary).
    u: Vec<f64>,
    newton_iterations: usize,
    value: f64,
    jacobian: Option<Arc<BandedLu>>,
    forward_used: bool,
    transpose_used: bool,
    /// Adjoint on all nodes.
    adjoint: Option<Vec<f64>>,
    gradient: Option<Vec<f64>>,
}

/// The advection–diffusion–reaction model.
#[derive(Debug, Clone)]
pub struct AdrModel {
    shared: Arc<Shared>,
    counter: SolveCounter,
    cache: Option<Linearization>,
}

impl AdrModel {
    pub fn new(config: AdrConfig) -> Result<Self> {
        let grid = Grid::new(2, config.points)?;
        if !(config.newton_tol > 0.0) {
            return Err(Error::invalid("newton_tol", "must be positive"));
        }
        if config.max_newton == 0 {
            return Err(Error::invalid("max_newton", "must be at least 1"));
        }
        if config.velocity.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("velocity", "upwinding assumes nonnegative components"));
        }
        if config.reaction < 0.0 {
            return Err(Error::invalid("reaction", "must be nonnegative"));
        }
        if !(config.source.width > 0.0) {
            return Err(Error::invalid("source.width", "must be positive"));
        }
        let p = grid.points();
        let n = grid.size();
        let mut edges = Vec::with_capacity(2 * n);
        for j in 0..p {
            for i in 0..p {
                let k = j * p + i;
                if i + 1 < p {
                    let s = if j == 0 || j == p - 1 { 0.5 } else { 1.0 };
                    edges.push(Edge { k, l: k + 1, s });
                }
                if j + 1 < p {
                    let s = if i == 0 || i == p - 1 { 0.5 } else { 1.0 };
                    edges.push(Edge { k, l: k + p, s });
                }
            }
        }
        let weights: Vec<f64> = (0..n).map(|k| grid.quadrature_weight(k)).collect();
        let mut free_index = vec![usize::MAX; n];
        let mut free_nodes = Vec::with_capacity(n - p);
        for j in 0..p {
            for i in 1..p {
                let k = j * p + i;
                free_index[k] = free_nodes.len();
                free_nodes.push(k);
            }
        }
        let src = config.source;
        let load: Vec<f64> = free_nodes
            .iter()
            .map(|&k| {
                let [x, y] = grid.coords(k);
                let r2 = (x - src.center[0]).powi(2) + (y - src.center[1]).powi(2);
                weights[k] * src.amplitude * (-0.5 * r2 / (src.width * src.width)).exp()
            })
            .collect();
        let load_norm = norm(&load);
        Ok(Self {
            shared: Arc::new(Shared {
                config,
                grid,
                edges,
                weights,
                free_index,
                free_nodes,
                load,
                load_norm,
            }),
            counter: SolveCounter::default(),
            cache: None,
        })
    }

    pub fn config(&self) -> &AdrConfig {
        &self.shared.config
    }

    pub fn grid(&self) -> Grid {
        self.shared.grid
    }

    /// Newton iterations used by the most recent state solve.
    pub fn last_newton_iterations(&self) -> Option<usize> {
        self.cache.as_ref().map(|c| c.newton_iterations)
    }

    /// State on all grid nodes at `m`.
    pub fn solve_state(&mut self, m: &[f64]) -> Result<Vec<f64>> {
        self.linearize(m)?;
        Ok(self.cache.as_ref().expect("linearized").u.clone())
    }

    /// QoI of a given state (on all nodes) and parameter.
    pub fn evaluate_qoi(&self, u: &[f64], m: &[f64]) -> Result<f64> {
        let n = self.shared.grid.size();
        if u.len() != n || m.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if u.len() != n { u.len() } else { m.len() },
            });
        }
        let coef = self.coefficients(m);
        Ok(self.qoi_value(&coef, u))
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        let n = self.shared.grid.size();
        if len != n {
            Err(Error::DimensionMismatch { expected: n, got: len })
        } else {
            Ok(())
        }
    }

    fn coefficients(&self, m: &[f64]) -> EdgeCoefficients {
        let ne = self.shared.edges.len();
        let mut out = EdgeCoefficients {
            c: Vec::with_capacity(ne),
            ga: Vec::with_capacity(ne),
            gb: Vec::with_capacity(ne),
            haa: Vec::with_capacity(ne),
            hab: Vec::with_capacity(ne),
            hbb: Vec::with_capacity(ne),
        };
        for e in &self.shared.edges {
            let a = (-m[e.k]).exp();
            let b = (-m[e.l]).exp();
            let sum = a + b;
            let s2 = sum * sum;
            let s3 = s2 * sum;
            out.c.push(e.s * 2.0 / sum);
            out.ga.push(e.s * 2.0 * a / s2);
            out.gb.push(e.s * 2.0 * b / s2);
            out.haa.push(e.s * 2.0 * a * (a - b) / s3);
            out.hab.push(e.s * 4.0 * a * b / s3);
            out.hbb.push(e.s * 2.0 * b * (b - a) / s3);
        }
        out
    }

    /// `K(c) x` on all nodes.
    fn stiffness_apply(&self, c: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (e, ce) in self.shared.edges.iter().zip(c) {
            let f = ce * (x[e.k] - x[e.l]);
            y[e.k] += f;
            y[e.l] -= f;
        }
        y
    }

    /// Edge coefficient perturbation `dc` for a parameter direction.
    fn coefficient_direction(&self, coef: &EdgeCoefficients, dm: &[f64]) -> Vec<f64> {
        self.shared
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| coef.ga[i] * dm[e.k] + coef.gb[i] * dm[e.l])
            .collect()
    }

    /// `sum_e t_e dc_e / dm` for edge weights `t_e = (x_k - x_l)(y_k - y_l)`.
    fn parameter_gradient(&self, coef: &EdgeCoefficients, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (i, e) in self.shared.edges.iter().enumerate() {
            let t = (x[e.k] - x[e.l]) * (y[e.k] - y[e.l]);
            out[e.k] += coef.ga[i] * t;
            out[e.l] += coef.gb[i] * t;
        }
    }

    /// `sum_e t_e (d^2 c_e / dm^2) dm`.
    fn parameter_hessian(&self, coef: &EdgeCoefficients, dm: &[f64], x: &[f64], y: &[f64], out: &mut [f64]) {
        for (i, e) in self.shared.edges.iter().enumerate() {
            let t = (x[e.k] - x[e.l]) * (y[e.k] - y[e.l]);
            out[e.k] += (coef.haa[i] * dm[e.k] + coef.hab[i] * dm[e.l]) * t;
            out[e.l] += (coef.hab[i] * dm[e.k] + coef.hbb[i] * dm[e.l]) * t;
        }
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.shared.free_nodes.iter().map(|&k| full[k]).collect()
    }

    fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.shared.grid.size()];
        for (&k, v) in self.shared.free_nodes.iter().zip(free) {
            full[k] = *v;
        }
        full
    }

    /// Residual on free nodes for a full state vector.
    fn residual(&self, coef: &EdgeCoefficients, u: &[f64]) -> Vec<f64> {
        let sh = &*self.shared;
        let p = sh.grid.points();
        let h = sh.grid.spacing();
        let [vx, vy] = sh.config.velocity;
        let a = sh.config.reaction;
        let diff = self.stiffness_apply(&coef.c, u);
        sh.free_nodes
            .iter()
            .zip(&sh.load)
            .map(|(&k, load)| {
                let (i, j) = (k % p, k / p);
                let w = sh.weights[k];
                let mut r = diff[k] + w * (vx * (u[k] - u[k - 1]) / h + a * u[k] * u[k] * u[k]);
                if j > 0 {
                    r += w * vy * (u[k] - u[k - p]) / h;
                }
                debug_assert!(i > 0);
                r - load
            })
            .collect()
    }

    fn jacobian(&self, coef: &EdgeCoefficients, u: &[f64]) -> BandedMatrix {
        let sh = &*self.shared;
        let p = sh.grid.points();
        let h = sh.grid.spacing();
        let [vx, vy] = sh.config.velocity;
        let a = sh.config.reaction;
        let nf = sh.free_nodes.len();
        let band = p - 1;
        let mut jac = BandedMatrix::zeros(nf, band, band);
        for (e, c) in sh.edges.iter().zip(&coef.c) {
            let fk = sh.free_index[e.k];
            let fl = sh.free_index[e.l];
            if fk != usize::MAX {
                jac.add(fk, fk, *c);
            }
            if fl != usize::MAX {
                jac.add(fl, fl, *c);
            }
            if fk != usize::MAX && fl != usize::MAX {
                jac.add(fk, fl, -c);
                jac.add(fl, fk, -c);
            }
        }
        for (f, &k) in sh.free_nodes.iter().enumerate() {
            let (i, j) = (k % p, k / p);
            let w = sh.weights[k];
            jac.add(f, f, w * (vx / h + 3.0 * a * u[k] * u[k]));
            if i > 1 {
                jac.add(f, sh.free_index[k - 1], -w * vx / h);
            }
            if j > 0 {
                jac.add(f, f, w * vy / h);
                jac.add(f, sh.free_index[k - p], -w * vy / h);
            }
        }
        jac
    }

    fn qoi_value(&self, coef: &EdgeCoefficients, u: &[f64]) -> f64 {
        let w = &self.shared.weights;
        match self.shared.config.qoi {
            Qoi::L2 => u.iter().zip(w).map(|(x, w)| w * x * x).sum(),
            Qoi::L3 => u.iter().zip(w).map(|(x, w)| w * x * x * x).sum(),
            Qoi::Energy => dot(&self.stiffness_apply(&coef.c, u), u),
        }
    }

    /// `d q / d u` on all nodes.
    fn qoi_state_derivative(&self, coef: &EdgeCoefficients, u: &[f64]) -> Vec<f64> {
        let w = &self.shared.weights;
        match self.shared.config.qoi {
            Qoi::L2 => u.iter().zip(w).map(|(x, w)| 2.0 * w * x).collect(),
            Qoi::L3 => u.iter().zip(w).map(|(x, w)| 3.0 * w * x * x).collect(),
            Qoi::Energy => {
                let mut y = self.stiffness_apply(&coef.c, u);
                y.iter_mut().for_each(|v| *v *= 2.0);
                y
            }
        }
    }

    /// Newton solve with backtracking, starting from zero.
    fn newton(&mut self, coef: &EdgeCoefficients) -> Result<(Vec<f64>, usize)> {
        let cfg = self.shared.config;
        let tol = cfg.newton_tol * self.shared.load_norm;
        let mut u = vec![0.0; self.shared.grid.size()];
        let mut r = self.residual(coef, &u);
        let mut rn = norm(&r);
        for it in 1..=cfg.max_newton {
            let lu = self.jacobian(coef, &u).factorize()?;
            let mut du = r.clone();
            lu.solve_in_place(&mut du);
            self.counter.state_newton += 1;
            self.counter.unique_systems += 1;
            let step = self.extend(&du);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a - t * b).collect();
                let rt = self.residual(coef, &trial);
                let rtn = norm(&rt);
                if rtn <= (1.0 - 1e-4 * t) * rn || t < 1e-6 || rtn <= tol {
                    u = trial;
                    r = rt;
                    rn = rtn;
                    break;
                }
                t *= 0.5;
            }
            if !rn.is_finite() {
                return Err(Error::NewtonDivergence { iterations: it, residual: rn });
            }
            if rn <= tol {
                return Ok((u, it));
            }
        }
        Err(Error::NewtonDivergence {
            iterations: cfg.max_newton,
            residual: rn,
        })
    }

    fn linearize(&mut self, m: &[f64]) -> Result<()> {
        self.check_dim(m.len())?;
        if let Some(c) = &self.cache {
            if c.m == m {
                return Ok(());
            }
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter"));
        }
        self.cache = None;
        let coef = self.coefficients(m);
        let (u, newton_iterations) = self.newton(&coef)?;
        let value = self.qoi_value(&coef, &u);
        self.cache = Some(Linearization {
            m: m.to_vec(),
            coef,
            u,
            newton_iterations,
            value,
            jacobian: None,
            forward_used: false,
            transpose_used: false,
            adjoint: None,
            gradient: None,
        });
        Ok(())
    }

    fn converged_jacobian(&mut self) -> Result<Arc<BandedLu>> {
        let cache = self.cache.as_ref().expect("linearized");
        if let Some(j) = &cache.jacobian {
            return Ok(j.clone());
        }
        let lu = Arc::new(self.jacobian(&cache.coef, &cache.u).factorize()?);
        self.cache.as_mut().expect("linearized").jacobian = Some(lu.clone());
        Ok(lu)
    }

    /// Solve with the Jacobian at the converged state.
    fn solve_linearized(&mut self, rhs_full: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let lu = self.converged_jacobian()?;
        let mut x = self.restrict(rhs_full);
        let cache = self.cache.as_mut().expect("linearized");
        if transpose {
            lu.solve_transpose_in_place(&mut x);
            if !cache.transpose_used {
                cache.transpose_used = true;
                self.counter.unique_systems += 1;
            }
        } else {
            lu.solve_in_place(&mut x);
            if !cache.forward_used {
                cache.forward_used = true;
                self.counter.unique_systems += 1;
            }
        }
        Ok(self.extend(&x))
    }

    fn ensure_adjoint(&mut self) -> Result<()> {
        if self.cache.as_ref().expect("linearized").adjoint.is_some() {
            return Ok(());
        }
        let cache = self.cache.as_ref().expect("linearized");
        let mut rhs = self.qoi_state_derivative(&cache.coef, &cache.u);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let lam = self.solve_linearized(&rhs, true)?;
        self.counter.adjoint += 1;
        let cache = self.cache.as_ref().expect("linearized");
        let mut g = vec![0.0; lam.len()];
        self.parameter_gradient(&cache.coef, &cache.u, &lam, &mut g);
        if self.shared.config.qoi == Qoi::Energy {
            self.parameter_gradient(&cache.coef, &cache.u, &cache.u, &mut g);
        }
        let cache = self.cache.as_mut().expect("linearized");
        cache.adjoint = Some(lam);
        cache.gradient = Some(g);
        Ok(())
    }
}

impl QoIModel for AdrModel {
    fn dim(&self) -> usize {
        self.shared.grid.size()
    }

    fn evaluate(&mut self, m: &[f64]) -> Result<f64> {
        self.linearize(m)?;
        Ok(self.cache.as_ref().expect("linearized").value)
    }

    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.linearize(m)?;
        self.ensure_adjoint()?;
        let c = self.cache.as_ref().expect("linearized");
        Ok((c.value, c.gradient.clone().expect("adjoint computed")))
    }

    fn hessvec(&mut self, m: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(dir.len())?;
        self.linearize(m)?;
        self.ensure_adjoint()?;
        self.counter.hessian_actions += 1;
        let qoi = self.shared.config.qoi;
        let a = self.shared.config.reaction;

        let cache = self.cache.as_ref().expect("linearized");
        let u = cache.u.clone();
        let lam = cache.adjoint.clone().expect("adjoint computed");
        let coef = cache.coef.clone();
        let dc = self.coefficient_direction(&coef, dir);

        // incremental state: J u_hat = -(dR/dm) dir
        let mut rhs = self.stiffness_apply(&dc, &u);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let uh = self.solve_linearized(&rhs, false)?;
        self.counter.incremental_state += 1;

        // incremental adjoint: J^T lam_hat = -(L_uu u_hat + L_um dir)
        let w = &self.shared.weights;
        let mut rhs = self.stiffness_apply(&dc, &lam);
        for k in 0..rhs.len() {
            rhs[k] += 6.0 * a * w[k] * u[k] * lam[k] * uh[k];
        }
        match qoi {
            Qoi::L2 => (0..rhs.len()).for_each(|k| rhs[k] += 2.0 * w[k] * uh[k]),
            Qoi::L3 => (0..rhs.len()).for_each(|k| rhs[k] += 6.0 * w[k] * u[k] * uh[k]),
            Qoi::Energy => {
                let kuh = self.stiffness_apply(&coef.c, &uh);
                let kdu = self.stiffness_apply(&dc, &u);
                for k in 0..rhs.len() {
                    rhs[k] += 2.0 * kuh[k] + 2.0 * kdu[k];
                }
            }
        }
        rhs.iter_mut().for_each(|v| *v = -*v);
        let lh = self.solve_linearized(&rhs, true)?;
        self.counter.incremental_adjoint += 1;

        let mut out = vec![0.0; dir.len()];
        self.parameter_gradient(&coef, &u, &lh, &mut out);
        self.parameter_gradient(&coef, &uh, &lam, &mut out);
        self.parameter_hessian(&coef, dir, &u, &lam, &mut out);
        if qoi == Qoi::Energy {
            let mut extra = vec![0.0; dir.len()];
            self.parameter_gradient(&coef, &u, &uh, &mut extra);
            out.iter_mut().zip(&extra).for_each(|(o, e)| *o += 2.0 * e);
            self.parameter_hessian(&coef, dir, &u, &u, &mut out);
        }
        Ok(out)
    }

    fn counter(&self) -> SolveCounter {
        self.counter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_elliptic_covariance, matern_coefficients, GaussianMeasure};
    use crate::model::check_derivatives;
    use crate::rng;

    fn model(points: usize, qoi: Qoi) -> AdrModel {
        AdrModel::new(AdrConfig {
            points,
            qoi,
            ..Default::default()
        })
        .unwrap()
    }

    fn random_vec(seed: u64, n: usize, scale: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, 5);
        let mut v = vec![0.0; n];
        rng::fill_standard_normal(&mut r, &mut v);
        v.iter_mut().for_each(|x| *x *= scale);
        v
    }

    #[test]
    fn zero_source_gives_zero_state() {
        let mut cfg = AdrConfig::default();
        cfg.points = 8;
        cfg.source.amplitude = 0.0;
        let mut m = AdrModel::new(cfg).unwrap();
        let u = m.solve_state(&[0.0; 64]).unwrap();
        assert!(u.iter().all(|x| *x == 0.0));
        assert_eq!(m.last_newton_iterations(), Some(1));
        for q in [Qoi::L2, Qoi::L3, Qoi::Energy] {
            let mm = model(8, q);
            assert_eq!(mm.evaluate_qoi(&u, &[0.0; 64]).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_case_matches_direct_solve() {
        let mut cfg = AdrConfig::default();
        cfg.points = 12;
        cfg.reaction = 0.0;
        let mut m = AdrModel::new(cfg).unwrap();
        let zero = vec![0.0; 144];
        let u = m.solve_state(&zero).unwrap();
        let coef = m.coefficients(&zero);
        let lu = m.jacobian(&coef, &zero).factorize().unwrap();
        let direct = m.extend(&lu.solve(&m.shared.load));
        let scale = norm(&direct);
        for (a, b) in u.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
        // linear scaling of state and L2 QoI with the source
        let q1 = m.evaluate(&zero).unwrap();
        cfg.source.amplitude = 3.0;
        let mut m3 = AdrModel::new(cfg).unwrap();
        let q3 = m3.evaluate(&zero).unwrap();
        assert!((q3 - 9.0 * q1).abs() < 1e-10 * q3);
    }

    #[test]
    fn qoi_quadrature_properties() {
        let m = model(9, Qoi::L2);
        let n = 81;
        let c = 0.7;
        let u: Vec<f64> = (0..n).map(|k| if k % 9 == 0 { 0.0 } else { c }).collect();
        let v = m.evaluate_qoi(&u, &vec![0.0; n]).unwrap();
        // constant except the Dirichlet column, which carries weight h/2
        let h = 1.0 / 8.0;
        assert!((v - c * c * (1.0 - 0.5 * h)).abs() < 1e-12);
        let m3 = model(9, Qoi::L3);
        let mu = random_vec(2, n, 1.0);
        let neg: Vec<f64> = mu.iter().map(|x| -x).collect();
        let z = vec![0.0; n];
        assert_eq!(m3.evaluate_qoi(&neg, &z).unwrap(), -m3.evaluate_qoi(&mu, &z).unwrap());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for q in [Qoi::L2, Qoi::L3, Qoi::Energy] {
            let mut mdl = model(10, q);
            let n = 100;
            let m = random_vec(1, n, 0.5);
            let d = random_vec(2, n, 1.0);
            let e = random_vec(3, n, 1.0);
            let chk = check_derivatives(&mut mdl, &m, &d, &e, 1e-4).unwrap();
            assert!(chk.gradient_rel_error < 1e-6, "{q:?} {chk:?}");
            assert!(chk.hessvec_rel_error < 1e-5, "{q:?} {chk:?}");
            assert!(chk.symmetry_rel_error < 1e-9, "{q:?} {chk:?}");
        }
    }

    #[test]
    fn strong_reaction_derivatives() {
        let mut cfg = AdrConfig::default();
        cfg.points = 8;
        cfg.reaction = 50.0;
        cfg.source.amplitude = 20.0;
        let mut mdl = AdrModel::new(cfg).unwrap();
        let n = 64;
        let chk = check_derivatives(&mut mdl, &random_vec(7, n, 0.3), &random_vec(8, n, 1.0), &random_vec(9, n, 1.0), 1e-4)
            .unwrap();
        assert!(chk.gradient_rel_error < 1e-6, "{chk:?}");
        assert!(chk.hessvec_rel_error < 1e-5, "{chk:?}");
        assert!(chk.symmetry_rel_error < 1e-9, "{chk:?}");
    }

    #[test]
    fn solve_accounting() {
        let mut mdl = model(10, Qoi::L2);
        let m = random_vec(4, 100, 0.3);
        mdl.evaluate(&m).unwrap();
        let nl = mdl.counter().state_newton;
        assert_eq!(mdl.counter().unique_systems, nl);
        mdl.gradient(&m).unwrap();
        mdl.gradient(&m).unwrap();
        let c = mdl.counter();
        assert_eq!((c.adjoint, c.unique_systems), (1, nl + 1));
        for s in 0..3 {
            mdl.hessvec(&m, &random_vec(10 + s, 100, 1.0)).unwrap();
        }
        let c = mdl.counter();
        assert_eq!(c.total(), nl + 1 + 6);
        assert_eq!(c.unique_systems, nl + 2);
        assert_eq!(c.hessian_actions, 3);
    }

    #[test]
    fn newton_converges_quickly_for_prior_samples() {
        let grid = Grid::new(2, 32).unwrap();
        let (g, d) = matern_coefficients(2, 1.0, 1.0).unwrap();
        let prior = GaussianMeasure::centered(Arc::new(build_elliptic_covariance(grid, g, d).unwrap()));
        let mut mdl = model(32, Qoi::L2);
        for i in 0..5 {
            let m = prior.sample_indexed(3, i);
            mdl.evaluate(&m).unwrap();
            assert!(mdl.last_newton_iterations().unwrap() <= 5);
        }
    }
}

//! Mean, standard deviation and CVaR from surrogates, closed forms and
//! Monte Carlo.
//!
//! CVaR uses the variational form `min_t t + E[(Q - t)^+] / (1 - alpha)`.
//! For a weighted sample the minimizer is the lower weighted
//! `alpha`-quantile, so no numerical minimization is needed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{gaussian_expected_excess, normal_pdf, normal_quantile, normal_sf};
use crate::measure::GaussianMeasure;
use crate::mixture::GaussianMixtureApprox;
use crate::model::QoIModel;
use crate::rng;
use crate::taylor::{
    sample_surrogate_with, surrogate_mean, surrogate_second_moment, Order, TaylorSurrogate,
};

/// Fewer pooled samples than this above `t*` raises the tail warning.
pub const MIN_TAIL_SAMPLES: usize = 10;

/// Largest fraction of failed model evaluations a Monte Carlo run tolerates.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RiskKind {
    Mean,
    Sd,
    Cvar,
}

impl RiskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::Mean => "mean",
            RiskKind::Sd => "sd",
            RiskKind::Cvar => "cvar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    LinGm,
    QuadGm,
    LinSingle,
    QuadSingle,
    Mc,
    /// Closed form for a Gaussian.
    Analytic,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::LinGm => "lin-gm",
            Method::QuadGm => "quad-gm",
            Method::LinSingle => "lin-single",
            Method::QuadSingle => "quad-single",
            Method::Mc => "mc",
            Method::Analytic => "analytic",
        }
    }

    /// Tag for surrogates of `order` over `components` Gaussians.
    pub fn for_surrogates(order: Order, components: usize) -> Self {
        match (order, components) {
            (Order::Linear, 1) => Method::LinSingle,
            (Order::Quadratic, 1) => Method::QuadSingle,
            (Order::Linear, _) => Method::LinGm,
            (Order::Quadratic, _) => Method::QuadGm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskEstimate {
    pub kind: RiskKind,
    pub alpha: Option<f64>,
    pub value: f64,
    pub method: Method,
    /// Draws behind the value; 0 for closed forms.
    pub sample_count: usize,
    /// Linear solves spent on the inputs.
    pub solve_count: usize,
    /// Minimizing `t`, which is the VaR, for CVaR estimates.
    pub var_t_star: Option<f64>,
    /// Sampling standard error when the value is a sample average.
    pub std_error: Option<f64>,
    /// Too few samples beyond `t*`.
    pub tail_warning: bool,
}

impl RiskEstimate {
    fn new(kind: RiskKind, method: Method, value: f64) -> Self {
        Self {
            kind,
            alpha: None,
            value,
            method,
            sample_count: 0,
            solve_count: 0,
            var_t_star: None,
            std_error: None,
            tail_warning: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CVaRConfig {
    pub alpha: f64,
    /// Surrogate draws per mixture component.
    pub samples_per_component: usize,
    /// Relative tolerance of the root find.
    pub tolerance: f64,
    /// Growth factor applied to the bracket half-width when it misses the root.
    pub bracket_expansion: f64,
}

impl Default for CVaRConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            samples_per_component: 100_000,
            tolerance: 1e-12,
            bracket_expansion: 2.0,
        }
    }
}

impl CVaRConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.samples_per_component == 0 {
            return Err(Error::invalid("samples_per_component", "must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if !(self.bracket_expansion > 1.0) {
            return Err(Error::invalid("bracket_expansion", "must exceed 1"));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha", "must lie strictly between 0 and 1"))
    }
}

fn check_inputs(surrogates: &[TaylorSurrogate], weights: &[f64]) -> Result<()> {
    if surrogates.is_empty() {
        return Err(Error::invalid("surrogates", "need at least one component"));
    }
    if surrogates.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: surrogates.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights", "must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("weights", "must sum to 1"));
    }
    Ok(())
}

fn method_of(surrogates: &[TaylorSurrogate]) -> Method {
    let order = if surrogates.iter().all(|s| s.order == Order::Linear) {
        Order::Linear
    } else {
        Order::Quadratic
    };
    Method::for_surrogates(order, surrogates.len())
}

fn solves_of(surrogates: &[TaylorSurrogate]) -> usize {
    surrogates.iter().map(|s| s.solves.total()).sum()
}

/// `sum w_i E[Q_i]`
pub fn mean_gm(surrogates: &[TaylorSurrogate], weights: &[f64]) -> Result<RiskEstimate> {
    check_inputs(surrogates, weights)?;
    let value = surrogates.iter().zip(weights).map(|(s, w)| w * surrogate_mean(s)).sum();
    let mut e = RiskEstimate::new(RiskKind::Mean, method_of(surrogates), value);
    e.solve_count = solves_of(surrogates);
    Ok(e)
}

/// `sum w_i E[Q_i^2] - (sum w_i E[Q_i])^2`, with roundoff negatives clamped.
pub fn variance_gm(surrogates: &[TaylorSurrogate], weights: &[f64]) -> Result<f64> {
    check_inputs(surrogates, weights)?;
    let mean: f64 = surrogates.iter().zip(weights).map(|(s, w)| w * surrogate_mean(s)).sum();
    let second: f64 = surrogates.iter().zip(weights).map(|(s, w)| w * surrogate_second_moment(s)).sum();
    clamp_variance(second - mean * mean, second)
}

fn clamp_variance(v: f64, scale: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-12 * scale.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(v))
    }
}

/// Standard deviation from the mixture surrogates.
pub fn var_gm(surrogates: &[TaylorSurrogate], weights: &[f64]) -> Result<RiskEstimate> {
    let v = variance_gm(surrogates, weights)?;
    let mut e = RiskEstimate::new(RiskKind::Sd, method_of(surrogates), v.sqrt());
    e.solve_count = solves_of(surrogates);
    Ok(e)
}

/// CVaR of `N(mu, sigma^2)`.
pub fn cvar_gaussian_analytic(mu: f64, sigma: f64, alpha: f64) -> Result<RiskEstimate> {
    check_alpha(alpha)?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be nonnegative"));
    }
    let z = normal_quantile(alpha);
    let mut e = RiskEstimate::new(RiskKind::Cvar, Method::Analytic, mu + sigma * normal_pdf(z) / (1.0 - alpha));
    e.alpha = Some(alpha);
    e.var_t_star = Some(mu + sigma * z);
    Ok(e)
}

/// CVaR of the Gaussian mixture `sum w_i N(mu_i, sd_i^2)`.
pub fn cvar_gaussian_mixture(means: &[f64], sds: &[f64], weights: &[f64], config: &CVaRConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let alpha = config.alpha;
    let sd_max = sds.iter().copied().fold(0.0, f64::max);
    if sd_max == 0.0 {
        let (t, c) = weighted_superquantile(
            &mut means.iter().copied().zip(weights.iter().copied()).collect::<Vec<_>>(),
            alpha,
        );
        return Ok((c, t));
    }
    let tail = |t: f64| -> f64 {
        let mut p = 0.0;
        for ((m, s), w) in means.iter().zip(sds).zip(weights) {
            p += w * if *s > 0.0 {
                normal_sf((t - m) / s)
            } else if *m > t {
                1.0
            } else {
                0.0
            };
        }
        p - (1.0 - alpha)
    };
    let lo_mean = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_mean = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut width = 12.0 * sd_max;
    let (mut lo, mut hi) = (lo_mean - width, hi_mean + width);
    let mut tries = 0;
    while !(tail(lo) >= 0.0 && tail(hi) <= 0.0) {
        tries += 1;
        if tries > 60 || !width.is_finite() {
            return Err(Error::BracketFailure { lo, hi });
        }
        width *= config.bracket_expansion;
        lo = lo_mean - width;
        hi = hi_mean + width;
    }
    while hi - lo > config.tolerance * lo.abs().max(hi.abs()).max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tail(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let excess: f64 = means
        .iter()
        .zip(sds)
        .zip(weights)
        .map(|((m, s), w)| w * gaussian_expected_excess(*m, *s, t))
        .sum();
    Ok((t + excess / (1.0 - alpha), t))
}

/// CVaR from linear surrogates: each component is Gaussian, so only the
/// one-dimensional root for `t*` is numerical.
pub fn cvar_linear_gm(surrogates: &[TaylorSurrogate], weights: &[f64], config: &CVaRConfig) -> Result<RiskEstimate> {
    check_inputs(surrogates, weights)?;
    if surrogates.iter().any(|s| s.order != Order::Linear) {
        return Err(Error::invalid("surrogates", "linear CVaR needs first-order surrogates"));
    }
    let means: Vec<f64> = surrogates.iter().map(|s| s.q0).collect();
    let sds: Vec<f64> = surrogates.iter().map(|s| s.g_cg.max(0.0).sqrt()).collect();
    let (value, t) = cvar_gaussian_mixture(&means, &sds, weights, config)?;
    let mut e = RiskEstimate::new(RiskKind::Cvar, method_of(surrogates), value);
    e.alpha = Some(config.alpha);
    e.var_t_star = Some(t);
    e.solve_count = solves_of(surrogates);
    Ok(e)
}

/// Lower weighted `alpha`-quantile `t` and `t + sum w (x - t)^+ / (1 - alpha)`.
///
/// Sorts `samples` in place; weights must sum to 1.
pub fn weighted_superquantile(samples: &mut [(f64, f64)], alpha: f64) -> (f64, f64) {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut t = samples[samples.len() - 1].0;
    for &(x, w) in samples.iter() {
        acc += w;
        if acc >= alpha {
            t = x;
            break;
        }
    }
    let excess: f64 = samples.iter().map(|(x, w)| w * (x - t).max(0.0)).sum();
    (t, t + excess / (1.0 - alpha))
}

/// Empirical CVaR objective `t + sum w (x - t)^+ / (1 - alpha)`.
pub fn cvar_objective(samples: &[(f64, f64)], alpha: f64, t: f64) -> f64 {
    t + samples.iter().map(|(x, w)| w * (x - t).max(0.0)).sum::<f64>() / (1.0 - alpha)
}

/// CVaR from `samples_per_component` surrogate draws per component, pooled
/// with weights `w_i / M`. Component `i` draws from its own stream.
pub fn cvar_quadratic_gm(
    surrogates: &[TaylorSurrogate],
    weights: &[f64],
    config: &CVaRConfig,
    seed: u64,
) -> Result<RiskEstimate> {
    check_inputs(surrogates, weights)?;
    config.validate()?;
    let m = config.samples_per_component;
    let mut draws = Vec::with_capacity(surrogates.len());
    let mut failures = Vec::new();
    for (i, s) in surrogates.iter().enumerate() {
        let mut r = rng::stream(seed, rng::SURROGATE_SAMPLER_BASE + i as u64);
        match sample_surrogate_with(s, &mut r, m) {
            Ok(d) => draws.push(d),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::ComponentFailures(failures));
    }
    let mut e = cvar_from_component_draws(&draws, weights, config.alpha)?;
    e.method = method_of(surrogates);
    e.solve_count = solves_of(surrogates);
    Ok(e)
}

/// Pooled CVaR of per-component draws.
pub fn cvar_from_component_draws(draws: &[Vec<f64>], weights: &[f64], alpha: f64) -> Result<RiskEstimate> {
    check_alpha(alpha)?;
    let mut pooled = Vec::with_capacity(draws.iter().map(Vec::len).sum());
    for (d, w) in draws.iter().zip(weights) {
        if d.is_empty() {
            return Err(Error::invalid("draws", "every component needs at least one draw"));
        }
        let wi = w / d.len() as f64;
        pooled.extend(d.iter().map(|x| (*x, wi)));
    }
    if pooled.iter().any(|(x, _)| !x.is_finite()) {
        return Err(Error::NonFinite("surrogate draws"));
    }
    let (t, value) = weighted_superquantile(&mut pooled, alpha);
    let above = pooled.iter().filter(|(x, _)| *x > t).count();
    // delta-method error with t* held fixed
    let mut var = 0.0;
    for (d, w) in draws.iter().zip(weights) {
        let n = d.len() as f64;
        if n < 2.0 {
            continue;
        }
        let h: Vec<f64> = d.iter().map(|x| (x - t).max(0.0) / (1.0 - alpha)).collect();
        let mh = h.iter().sum::<f64>() / n;
        let vh = h.iter().map(|x| (x - mh) * (x - mh)).sum::<f64>() / (n - 1.0);
        var += w * w * vh / n;
    }
    let mut e = RiskEstimate::new(RiskKind::Cvar, Method::QuadGm, value);
    e.alpha = Some(alpha);
    e.var_t_star = Some(t);
    e.sample_count = pooled.len();
    e.std_error = Some(var.sqrt());
    e.tail_warning = above < MIN_TAIL_SAMPLES;
    Ok(e)
}

/// Measures that can be sampled from a caller-provided stream.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, r: &mut rng::Rng) -> Vec<f64>;
}

impl Sampler for GaussianMeasure {
    fn dim(&self) -> usize {
        GaussianMeasure::dim(self)
    }

    fn draw(&self, r: &mut rng::Rng) -> Vec<f64> {
        self.sample_with(r)
    }
}

impl Sampler for GaussianMixtureApprox {
    fn dim(&self) -> usize {
        self.base().dim()
    }

    fn draw(&self, r: &mut rng::Rng) -> Vec<f64> {
        self.sample_with(r)
    }
}

/// Evaluate `Q` on Monte Carlo samples `indices`; sample `i` always uses
/// stream `MC_BASE + i`. Failed evaluations are `None`.
pub fn mc_evaluate<M: QoIModel + ?Sized, S: Sampler + ?Sized>(
    model: &mut M,
    source: &S,
    seed: u64,
    indices: core::ops::Range<u64>,
) -> Vec<Option<f64>> {
    indices
        .map(|i| {
            let mut r = rng::stream(seed, rng::MC_BASE + i);
            let m = source.draw(&mut r);
            model.evaluate(&m).ok().filter(|q| q.is_finite())
        })
        .collect()
}

/// Summary of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McSummary {
    pub estimates: Vec<RiskEstimate>,
    pub failures: usize,
    pub second_moment: f64,
}

/// Mean, sd and empirical CVaR per `alpha` from Monte Carlo values.
pub fn mc_summary(values: &[Option<f64>], alphas: &[f64], solve_count: usize) -> Result<McSummary> {
    for a in alphas {
        check_alpha(*a)?;
    }
    let total = values.len();
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failures = total - ok.len();
    if failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed: failures, total });
    }
    let n = ok.len();
    if n < 2 {
        return Err(Error::invalid("samples", "need at least two successful evaluations"));
    }
    let nf = n as f64;
    let mean = ok.iter().sum::<f64>() / nf;
    let var = ok.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / (nf - 1.0);
    let second = ok.iter().map(|q| q * q).sum::<f64>() / nf;
    let base = |kind, value| {
        let mut e = RiskEstimate::new(kind, Method::Mc, value);
        e.sample_count = n;
        e.solve_count = solve_count;
        e
    };
    let mut m = base(RiskKind::Mean, mean);
    m.std_error = Some((var / nf).sqrt());
    let mut sd = base(RiskKind::Sd, var.sqrt());
    // normal-theory standard error of the sample sd
    sd.std_error = Some(var.sqrt() / (2.0 * (nf - 1.0)).sqrt());
    let mut estimates = vec![m, sd];
    let mut pooled: Vec<(f64, f64)> = ok.iter().map(|q| (*q, 1.0 / nf)).collect();
    for &alpha in alphas {
        let (t, value) = weighted_superquantile(&mut pooled, alpha);
        let h: Vec<f64> = ok.iter().map(|q| (q - t).max(0.0) / (1.0 - alpha)).collect();
        let mh = h.iter().sum::<f64>() / nf;
        let vh = h.iter().map(|x| (x - mh) * (x - mh)).sum::<f64>() / (nf - 1.0);
        let mut c = base(RiskKind::Cvar, value);
        c.alpha = Some(alpha);
        c.var_t_star = Some(t);
        c.std_error = Some((vh / nf).sqrt());
        c.tail_warning = ok.iter().filter(|q| **q > t).count() < MIN_TAIL_SAMPLES;
        estimates.push(c);
    }
    Ok(McSummary {
        estimates,
        failures,
        second_moment: second,
    })
}

/// Monte Carlo reference with `samples` model evaluations.
pub fn mc_baseline<M: QoIModel + ?Sized, S: Sampler + ?Sized>(
    model: &mut M,
    source: &S,
    alphas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McSummary> {
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least two"));
    }
    if source.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: source.dim(),
        });
    }
    let before = model.counter();
    let values = mc_evaluate(model, source, seed, 0..samples as u64);
    mc_summary(&values, alphas, model.counter().since(&before).total())
}

/// `|estimate - reference| / |reference|`
pub fn relative_error(estimate: f64, reference: f64) -> f64 {
    (estimate - reference).abs() / reference.abs()
}

/// `sqrt(mean (e_k - reference)^2) / |reference|` over repeated trials.
pub fn relative_rmse(estimates: &[f64], reference: f64) -> f64 {
    let n = estimates.len() as f64;
    let ms = estimates.iter().map(|e| (e - reference) * (e - reference)).sum::<f64>() / n;
    ms.sqrt() / reference.abs()
}

/// Inputs of the a-posteriori error bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Total-variation bound of the mixture.
    pub tv: f64,
    /// `E[Q^2]` under the original measure.
    pub second_moment: f64,
    /// `E[Q^2]` under the mixture.
    pub mixture_second_moment: f64,
    pub weights: Vec<f64>,
    /// `E_i[Q - Q_i]` per component.
    pub taylor_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub mixture_term: f64,
    pub taylor_term: f64,
    pub mean_bound: f64,
    pub cvar_bound: f64,
    pub mean_error: Option<f64>,
    pub cvar_error: Option<f64>,
    pub mean_within: Option<bool>,
    pub cvar_within: Option<bool>,
}

/// Evaluate the mean and CVaR error bounds and compare with observed
/// absolute errors when given.
pub fn bound_diagnostics(
    inputs: &BoundInputs,
    alpha: f64,
    mean_error: Option<f64>,
    cvar_error: Option<f64>,
) -> Result<BoundReport> {
    check_alpha(alpha)?;
    if inputs.weights.len() != inputs.taylor_errors.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.weights.len(),
            got: inputs.taylor_errors.len(),
        });
    }
    let mixture_term =
        2.0 * (inputs.second_moment + inputs.mixture_second_moment).max(0.0).sqrt() * inputs.tv.max(0.0).sqrt();
    let taylor_term: f64 = inputs.weights.iter().zip(&inputs.taylor_errors).map(|(w, e)| w * e.abs()).sum();
    let mean_bound = mixture_term + taylor_term;
    let cvar_bound = mean_bound / (1.0 - alpha);
    Ok(BoundReport {
        mixture_term,
        taylor_term,
        mean_bound,
        cvar_bound,
        mean_error,
        cvar_error,
        mean_within: mean_error.map(|e| e.abs() <= mean_bound),
        cvar_within: cvar_error.map(|e| e.abs() <= cvar_bound),
    })
}

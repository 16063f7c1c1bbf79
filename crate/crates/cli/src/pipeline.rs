//! Measure, model, direction, mixture, surrogates and risk estimates.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use gmtaylor_core::measure::{
    kle, matern_covariance, DenseCovariance, EllipticCovariance, EllipticOptions, GaussianMeasure, Grid,
};
use gmtaylor_core::mixture::{
    recursive_split, split_along_direction, split_along_direction_labeled, tv_numeric_2d, Density2D,
    GaussianMixtureApprox,
};
use gmtaylor_core::model::{
    check_derivatives, AdrConfig, AdrModel, AnalyticModel, DerivativeCheck, QoIModel, SolveCounter,
};
use gmtaylor_core::risk::{
    cvar_linear_gm, cvar_quadratic_gm, mc_evaluate, mc_summary, mean_gm, relative_error, var_gm, CVaRConfig,
    McSummary, Method, RiskEstimate, RiskKind,
};
use gmtaylor_core::rng;
use gmtaylor_core::split1d::{optimize_split, tv_1d, Split1D};
use gmtaylor_core::taylor::{build_surrogate, hep_direction, mixture_surrogates, Order, SurrogateSpec, TaylorSurrogate};
use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{hash_json, DirectionSource, ExperimentConfig, MeasureConfig, ModelConfig, SweepAxis};
use crate::library::SplitLibrary;

/// The configured model.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Adr(AdrModel),
    Analytic(AnalyticModel),
}

impl QoIModel for AnyModel {
    fn dim(&self) -> usize {
        match self {
            AnyModel::Adr(m) => m.dim(),
            AnyModel::Analytic(m) => m.dim(),
        }
    }

    fn evaluate(&mut self, m: &[f64]) -> gmtaylor_core::Result<f64> {
        match self {
            AnyModel::Adr(x) => x.evaluate(m),
            AnyModel::Analytic(x) => x.evaluate(m),
        }
    }

    fn gradient(&mut self, m: &[f64]) -> gmtaylor_core::Result<(f64, Vec<f64>)> {
        match self {
            AnyModel::Adr(x) => x.gradient(m),
            AnyModel::Analytic(x) => x.gradient(m),
        }
    }

    fn hessvec(&mut self, m: &[f64], dir: &[f64]) -> gmtaylor_core::Result<Vec<f64>> {
        match self {
            AnyModel::Adr(x) => x.hessvec(m, dir),
            AnyModel::Analytic(x) => x.hessvec(m, dir),
        }
    }

    fn counter(&self) -> SolveCounter {
        match self {
            AnyModel::Adr(x) => x.counter(),
            AnyModel::Analytic(x) => x.counter(),
        }
    }
}

pub fn build_measure(cfg: &MeasureConfig) -> anyhow::Result<GaussianMeasure> {
    let grid = Grid::new(cfg.dim, cfg.points)?;
    let cov: EllipticCovariance = match (cfg.gamma, cfg.delta) {
        (Some(g), Some(d)) => EllipticCovariance::new(
            grid,
            g,
            d,
            EllipticOptions {
                noise_variance: cfg.noise_variance,
                ..EllipticOptions::default()
            },
        )?,
        _ => matern_covariance(grid, cfg.corr_len, cfg.variance, cfg.calibration)?,
    };
    Ok(GaussianMeasure::centered(Arc::new(cov)))
}

pub fn build_model(cfg: &ExperimentConfig) -> anyhow::Result<AnyModel> {
    let n = Grid::new(cfg.measure.dim, cfg.measure.points)?.size();
    Ok(match &cfg.model {
        ModelConfig::Adr(p) => AnyModel::Adr(AdrModel::new(AdrConfig {
            points: cfg.measure.points,
            velocity: p.velocity,
            reaction: p.reaction,
            source: p.source,
            newton_tol: p.newton_tol,
            max_newton: p.max_newton,
            qoi: p.qoi,
        })?),
        ModelConfig::Analytic { a_scale, terms } => {
            let a = vec![*a_scale; n];
            let terms = terms
                .iter()
                .map(|t| {
                    let mut b = vec![0.0; n];
                    rng::fill_standard_normal(&mut rng::stream(t.seed, 0), &mut b);
                    b.iter_mut().for_each(|x| *x /= (n as f64).sqrt());
                    (t.beta, b)
                })
                .collect();
            AnyModel::Analytic(AnalyticModel::new(a, terms)?)
        }
    })
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub config_hash: String,
    pub seed: u64,
    pub n_mix: usize,
    pub direction: String,
    pub kind: String,
    pub alpha: Option<f64>,
    pub method: String,
    pub value: f64,
    pub reference: Option<f64>,
    pub rel_error: Option<f64>,
    pub std_error: Option<f64>,
    pub var_t_star: Option<f64>,
    pub sample_count: usize,
    pub solve_count: usize,
    pub tail_warning: bool,
}

/// A failure tagged with the pipeline stage, carrying the rows computed
/// before it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: anyhow::Error,
    pub partial: Vec<Record>,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {:#}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

/// Everything `estimate` produces besides the rows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunInfo {
    pub solves: SolveCounter,
    pub direction_eigenvalue: Option<f64>,
    pub tv_bound: f64,
    pub warnings: Vec<String>,
    pub seconds: f64,
    pub mc_cache_file: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EstimateRun {
    pub records: Vec<Record>,
    pub info: RunInfo,
}

/// Cached Monte Carlo values for one model/measure/sample-count/seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCache {
    pub key: String,
    pub seed: u64,
    pub samples: usize,
    pub solves: SolveCounter,
    /// `None` marks a failed evaluation.
    pub values: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct McKey<'a> {
    model: &'a ModelConfig,
    measure: &'a MeasureConfig,
    samples: usize,
    seed: u64,
}

pub fn mc_key(cfg: &ExperimentConfig) -> String {
    hash_json(&McKey {
        model: &cfg.model,
        measure: &cfg.measure,
        samples: cfg.mc.samples,
        seed: cfg.seed,
    })
}

pub fn mc_cache_path(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.mc
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("mc-{}.json", &mc_key(cfg)[..16])))
}

/// Monte Carlo values of `Q` under the configured measure, read from the
/// cache when present and written to it otherwise.
pub fn mc_values(cfg: &ExperimentConfig) -> anyhow::Result<McCache> {
    let key = mc_key(cfg);
    let path = mc_cache_path(cfg);
    if let Some(p) = &path {
        if p.exists() {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cache: McCache = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if cache.key == key {
                info!("Monte Carlo reference loaded from {}", p.display());
                return Ok(cache);
            }
            warn!("ignoring stale Monte Carlo cache {}", p.display());
        }
    }
    let measure = build_measure(&cfg.measure)?;
    let model = build_model(cfg)?;
    let samples = cfg.mc.samples as u64;
    let start = Instant::now();
    let chunk = 1000u64;
    let parts: Vec<(Vec<Option<f64>>, SolveCounter)> = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut m = model.clone();
            let vals = mc_evaluate(&mut m, &measure, cfg.seed, c * chunk..((c + 1) * chunk).min(samples));
            (vals, m.counter())
        })
        .collect();
    let mut values = Vec::with_capacity(samples as usize);
    let mut solves = SolveCounter::default();
    for (v, s) in parts {
        values.extend(v);
        solves.add(&s);
    }
    info!("{} Monte Carlo samples in {:.1?}", samples, start.elapsed());
    let cache = McCache {
        key,
        seed: cfg.seed,
        samples: cfg.mc.samples,
        solves,
        values,
    };
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(p, serde_json::to_string(&cache)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(cache)
}

/// Mean, sd and CVaR at the configured levels from Monte Carlo.
pub fn mc_reference(cfg: &ExperimentConfig) -> anyhow::Result<(McSummary, McCache)> {
    let cache = mc_values(cfg)?;
    let summary = mc_summary(&cache.values, &cfg.risk.alphas, cache.solves.total())?;
    Ok((summary, cache))
}

fn reference_for(summary: Option<&McSummary>, kind: RiskKind, alpha: Option<f64>) -> Option<f64> {
    summary?
        .estimates
        .iter()
        .find(|e| e.kind == kind && e.alpha == alpha)
        .map(|e| e.value)
}

fn record(cfg: &ExperimentConfig, n_mix: usize, direction: &str, e: &RiskEstimate, reference: Option<f64>) -> Record {
    Record {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        n_mix,
        direction: direction.to_string(),
        kind: e.kind.as_str().to_string(),
        alpha: e.alpha,
        method: e.method.as_str().to_string(),
        value: e.value,
        reference,
        rel_error: reference.map(|r| relative_error(e.value, r)),
        std_error: e.std_error,
        var_t_star: e.var_t_star,
        sample_count: e.sample_count,
        solve_count: e.solve_count,
        tail_warning: e.tail_warning,
    }
}

/// Risk estimates requested by the config from one set of surrogates.
fn estimates(
    cfg: &ExperimentConfig,
    surrogates: &[TaylorSurrogate],
    weights: &[f64],
    method: Method,
) -> anyhow::Result<Vec<RiskEstimate>> {
    let mut out = Vec::new();
    for kind in &cfg.risk.kinds {
        match kind {
            RiskKind::Mean => out.push(mean_gm(surrogates, weights)?),
            RiskKind::Sd => out.push(var_gm(surrogates, weights)?),
            RiskKind::Cvar => {
                for &alpha in &cfg.risk.alphas {
                    let c = CVaRConfig {
                        alpha,
                        samples_per_component: cfg.risk.samples_per_component,
                        ..CVaRConfig::default()
                    };
                    out.push(if surrogates.iter().all(|s| s.order == Order::Linear) {
                        cvar_linear_gm(surrogates, weights, &c)?
                    } else {
                        cvar_quadratic_gm(surrogates, weights, &c, cfg.seed)?
                    });
                }
            }
        }
    }
    for e in &mut out {
        e.method = method;
    }
    Ok(out)
}

fn surrogate_spec(cfg: &ExperimentConfig, order: Order) -> SurrogateSpec {
    SurrogateSpec {
        order,
        rank: cfg.surrogate.rank,
        oversampling: cfg.surrogate.oversampling,
        seed: cfg.seed,
    }
}

/// Surrogates for every component, fanned out over the rayon pool when it
/// has more than one thread.
fn component_surrogates(
    model: &mut AnyModel,
    mix: &GaussianMixtureApprox,
    spec: &SurrogateSpec,
) -> anyhow::Result<Vec<TaylorSurrogate>> {
    if rayon::current_num_threads() <= 1 {
        return Ok(mixture_surrogates(model, mix, spec)?);
    }
    let built: Vec<_> = mix
        .components()
        .par_iter()
        .map(|c| {
            let mut m = model.clone();
            build_surrogate(&mut m, c.measure(), spec)
        })
        .collect();
    let mut out = Vec::with_capacity(built.len());
    let mut failures = Vec::new();
    for (i, b) in built.into_iter().enumerate() {
        match b {
            Ok(s) => out.push(s),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        return Err(gmtaylor_core::Error::ComponentFailures(failures).into());
    }
    Ok(out)
}

pub fn load_split(cfg: &ExperimentConfig) -> anyhow::Result<Split1D> {
    match &cfg.split.library {
        Some(path) => Ok(SplitLibrary::read(path)?.get(cfg.split.n, cfg.split.p)?.clone()),
        None => Ok(optimize_split(cfg.split.n, cfg.split.p)?),
    }
}

fn surrogate_warnings(surs: &[TaylorSurrogate], label: &str, warnings: &mut Vec<String>) {
    for (i, s) in surs.iter().enumerate() {
        if let Ok((_, true)) = s.residual_variance() {
            let w = format!("{label}: component {i} residual variance clamped to zero");
            warn!("{w}");
            warnings.push(w);
        }
    }
}

/// Run the estimation pipeline for one configuration.
pub fn run_estimate(cfg: &ExperimentConfig) -> Result<EstimateRun, StageError> {
    let start = Instant::now();
    let mut records = Vec::new();
    let mut info = RunInfo::default();
    macro_rules! stage {
        ($name:expr, $e:expr) => {
            match (|| -> anyhow::Result<_> { Ok($e) })() {
                Ok(v) => v,
                Err(error) => {
                    return Err(StageError {
                        stage: $name,
                        error,
                        partial: records,
                    })
                }
            }
        };
    }

    let measure = stage!("measure", build_measure(&cfg.measure)?);
    let mut model = stage!("model", build_model(cfg)?);
    let reference = if cfg.mc.reference {
        let (summary, _) = stage!("reference", mc_reference(cfg)?);
        info.mc_cache_file = mc_cache_path(cfg);
        Some(summary)
    } else {
        None
    };
    let reference = reference.as_ref();

    let before = model.counter();
    let need_quad_single = cfg.surrogate.orders.contains(&Order::Quadratic)
        && (cfg.surrogate.single || cfg.split.n == 1);
    let mut singles: Vec<(Order, TaylorSurrogate)> = Vec::new();
    for &order in &cfg.surrogate.orders {
        if order == Order::Linear && !cfg.surrogate.single && cfg.split.n != 1 {
            continue;
        }
        if order == Order::Quadratic && !need_quad_single {
            continue;
        }
        let s = stage!("single", build_surrogate(&mut model, &measure, &surrogate_spec(cfg, order))?);
        singles.push((order, s));
    }
    for (order, s) in &singles {
        surrogate_warnings(std::slice::from_ref(s), "single", &mut info.warnings);
        if cfg.surrogate.single {
            let method = Method::for_surrogates(*order, 1);
            for e in stage!("risk", estimates(cfg, std::slice::from_ref(s), &[1.0], method)?) {
                let r = reference_for(reference, e.kind, e.alpha);
                records.push(record(cfg, 1, "none", &e, r));
            }
        }
    }

    let dir_label = match cfg.direction.source {
        DirectionSource::Kle => "kle",
        DirectionSource::Hep => "hep",
    };
    let direction = stage!("direction", {
        match cfg.direction.source {
            DirectionSource::Kle => {
                let k = kle(measure.covariance().as_ref(), 1)?;
                info.direction_eigenvalue = Some(k.values()[0]);
                k.vectors()[0].clone()
            }
            DirectionSource::Hep => {
                let quad = singles.iter().find(|(o, _)| *o == Order::Quadratic);
                match quad {
                    Some((_, s)) => {
                        info.direction_eigenvalue = Some(s.eigenvalues[0]);
                        s.eigenvectors[0].clone()
                    }
                    None => {
                        let (l, v) = hep_direction(&mut model, &measure, cfg.direction.oversampling, cfg.seed)?;
                        info.direction_eigenvalue = Some(l);
                        v
                    }
                }
            }
        }
    });
    let split = stage!("split", load_split(cfg)?);
    let mix = stage!("mixture", split_along_direction_labeled(&measure, &direction, &split, dir_label)?);
    info.tv_bound = mix.tv_bound();
    let weights = mix.weights();

    for &order in &cfg.surrogate.orders {
        let surs = if mix.len() == 1 {
            vec![singles.iter().find(|(o, _)| *o == order).expect("built above").1.clone()]
        } else {
            stage!("surrogates", component_surrogates(&mut model, &mix, &surrogate_spec(cfg, order))?)
        };
        surrogate_warnings(&surs, "mixture", &mut info.warnings);
        let method = match order {
            Order::Linear => Method::LinGm,
            Order::Quadratic => Method::QuadGm,
        };
        for e in stage!("risk", estimates(cfg, &surs, &weights, method)?) {
            if e.tail_warning {
                info.warnings.push(format!("{} {} alpha {:?}: few samples beyond t*", method.as_str(), e.kind.as_str(), e.alpha));
            }
            let r = reference_for(reference, e.kind, e.alpha);
            records.push(record(cfg, mix.len(), dir_label, &e, r));
        }
    }
    info.solves = model.counter().since(&before);
    info.seconds = start.elapsed().as_secs_f64();
    Ok(EstimateRun { records, info })
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub point: f64,
    pub config_hash: String,
    pub seed: u64,
    pub n_mix: usize,
    pub direction: String,
    pub kind: String,
    pub alpha: Option<f64>,
    pub method: String,
    pub value: f64,
    pub reference: Option<f64>,
    pub rel_error: Option<f64>,
    pub std_error: Option<f64>,
    pub sample_count: usize,
    pub solve_count: usize,
}

impl SweepRow {
    fn new(axis: &str, point: f64, r: Record) -> Self {
        Self {
            axis: axis.into(),
            point,
            config_hash: r.config_hash,
            seed: r.seed,
            n_mix: r.n_mix,
            direction: r.direction,
            kind: r.kind,
            alpha: r.alpha,
            method: r.method,
            value: r.value,
            reference: r.reference,
            rel_error: r.rel_error,
            std_error: r.std_error,
            sample_count: r.sample_count,
            solve_count: r.solve_count,
        }
    }
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Nmix => "nmix",
        SweepAxis::Alpha => "alpha",
        SweepAxis::Corrlen => "corrlen",
        SweepAxis::Variance => "variance",
    }
}

/// Configuration of one sweep point.
pub fn sweep_point(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> anyhow::Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Nmix => {
            if value < 1.0 || value.fract() != 0.0 {
                bail!("nmix values must be positive integers, got {value}");
            }
            c.split.n = value as usize;
        }
        SweepAxis::Alpha => c.risk.alphas = vec![value],
        SweepAxis::Corrlen => c.measure.corr_len = value,
        SweepAxis::Variance => c.measure.variance = value,
    }
    c.validate()?;
    Ok(c)
}

/// Run every point of a sweep; the alpha axis shares one set of surrogates.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> anyhow::Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("sweep has no values");
    }
    let name = axis_name(axis);
    if axis == SweepAxis::Alpha {
        let mut c = cfg.clone();
        c.risk.alphas = values.to_vec();
        c.risk.kinds = vec![RiskKind::Cvar];
        c.validate()?;
        let run = run_estimate(&c).map_err(|e| anyhow!("{e}"))?;
        return Ok(run
            .records
            .into_iter()
            .map(|r| SweepRow::new(name, r.alpha.unwrap_or(f64::NAN), r))
            .collect());
    }
    let points = values
        .iter()
        .map(|&v| sweep_point(cfg, axis, v))
        .collect::<anyhow::Result<Vec<_>>>()?;
    // references are shared between nmix points; compute them before fanning out
    if cfg.mc.reference {
        let mut seen = Vec::new();
        for p in &points {
            let k = mc_key(p);
            if !seen.contains(&k) {
                mc_values(p)?;
                seen.push(k);
            }
        }
    }
    let runs: Vec<anyhow::Result<Vec<Record>>> = points
        .par_iter()
        .map(|p| run_estimate(p).map(|r| r.records).map_err(|e| anyhow!("{e}")))
        .collect();
    let mut rows = Vec::new();
    for (v, run) in values.iter().zip(runs) {
        for r in run.with_context(|| format!("sweep point {name} = {v}"))? {
            rows.push(SweepRow::new(name, *v, r));
        }
    }
    Ok(rows)
}

/// Numeric against bookkept total variation for one split size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvCheckRow {
    pub n: usize,
    pub tv_numeric: f64,
    pub tv_1d: f64,
    pub abs_diff: f64,
    /// Change from refining one component of the N split by another N split.
    pub recursive_numeric: f64,
    pub recursive_predicted: f64,
    pub recursive_abs_diff: f64,
}

/// Random SPD 2x2 covariance and random non-eigen directions from `seed`.
pub fn random_2d_problem(seed: u64) -> (GaussianMeasure, Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, 0);
    let mut g = [0.0; 4];
    rng::fill_standard_normal(&mut r, &mut g);
    let a = DMatrix::from_row_slice(2, 2, &g);
    let c = &a * a.transpose() + DMatrix::identity(2, 2) * 0.5;
    let mut mean = vec![0.0; 2];
    rng::fill_standard_normal(&mut r, &mut mean);
    let cov = DenseCovariance::new(c).expect("SPD by construction");
    let eig = cov.matrix().clone().symmetric_eigen();
    let mut draw = || loop {
        let mut d = vec![0.0; 2];
        rng::fill_standard_normal(&mut r, &mut d);
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let along = (0..2)
            .map(|k| (eig.eigenvectors[(0, k)] * d[0] + eig.eigenvectors[(1, k)] * d[1]).abs() / n)
            .fold(0.0, f64::max);
        if along < 0.95 {
            return d;
        }
    };
    let psi = draw();
    let chi = draw();
    (GaussianMeasure::new(mean, Arc::new(cov)).expect("dimensions match"), psi, chi)
}

/// Numeric total variation of splits of a random 2D Gaussian against the
/// one-dimensional values.
pub fn tv_check(seed: u64, ns: &[usize], p: f64) -> anyhow::Result<Vec<TvCheckRow>> {
    if ns.is_empty() {
        bail!("no split sizes given");
    }
    let (measure, psi, chi) = random_2d_problem(seed);
    let base = Density2D::from_measure(&measure)?;
    let mut rows = Vec::new();
    for &n in ns {
        let split = optimize_split(n, p)?;
        let tv1 = tv_1d(&split)?;
        let mix = split_along_direction(&measure, &psi, &split)?;
        let tv = tv_numeric_2d(&base, &Density2D::from_mixture(&mix)?)?;
        let j = n / 2;
        let refined = recursive_split(&mix, j, &chi, &split)?;
        let rec = tv_numeric_2d(&Density2D::from_mixture(&mix)?, &Density2D::from_mixture(&refined)?)?;
        let pred = mix.components()[j].weight() * tv1;
        rows.push(TvCheckRow {
            n,
            tv_numeric: tv,
            tv_1d: tv1,
            abs_diff: (tv - tv1).abs(),
            recursive_numeric: rec,
            recursive_predicted: pred,
            recursive_abs_diff: (rec - pred).abs(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    #[serde(flatten)]
    pub check: DerivativeCheck,
    pub step: f64,
    pub seconds: f64,
    pub solves: SolveCounter,
}

/// Finite-difference check of the configured model at a prior draw along
/// two further prior draws.
pub fn derivative_report(cfg: &ExperimentConfig, step: f64) -> anyhow::Result<DerivativeReport> {
    let start = Instant::now();
    let measure = build_measure(&cfg.measure)?;
    let mut model = build_model(cfg)?;
    let m = measure.sample_indexed(cfg.seed, 0);
    let d = measure.sample_indexed(cfg.seed, 1);
    let e = measure.sample_indexed(cfg.seed, 2);
    let check = check_derivatives(&mut model, &m, &d, &e, step)?;
    Ok(DerivativeReport {
        check,
        step,
        seconds: start.elapsed().as_secs_f64(),
        solves: model.counter(),
    })
}

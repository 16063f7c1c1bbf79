//! End-to-end acceptance checks. Each prints one PASS/FAIL line; the
//! process exits nonzero when any fails.

use std::path::PathBuf;
use std::time::Instant;

use gmtaylor::config::{ExperimentConfig, ModelConfig, SweepAxis, TermConfig};
use gmtaylor::pipeline::{self, build_measure, build_model, run_estimate, run_sweep, tv_check, Record};
use gmtaylor_core::measure::{kle, Covariance, DenseCovariance, VarianceCalibration};
use gmtaylor_core::mixture::split_along_direction;
use gmtaylor_core::model::{mixture_moments, AdrConfig, AdrModel, AnalyticModel, QoIModel};
use gmtaylor_core::risk::{cvar_gaussian_analytic, cvar_gaussian_mixture, mean_gm, variance_gm, CVaRConfig};
use gmtaylor_core::split1d::{optimize_split, tv_1d};
use gmtaylor_core::taylor::{build_quadratic, sample_lowrank_quadratic, Order, TaylorSurrogate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn adr_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&data("adr32_l2.toml")).expect("criterion config");
    cfg.output.dir = std::env::temp_dir();
    cfg
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn derivatives() -> Outcome {
    let start = Instant::now();
    let r = pipeline::derivative_report(&adr_config(), 1e-4).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let c = r.check;
    check(
        c.gradient_rel_error <= 1e-5 && c.hessvec_rel_error <= 1e-4 && c.symmetry_rel_error <= 1e-8 && secs < 60.0,
        format!(
            "gradient {:.1e}, hessvec {:.1e}, symmetry {:.1e}, {secs:.2}s",
            c.gradient_rel_error, c.hessvec_rel_error, c.symmetry_rel_error
        ),
    )
}

fn solve_accounting() -> Outcome {
    let cfg = adr_config();
    let measure = build_measure(&cfg.measure).map_err(|e| e.to_string())?;
    let mut model = AdrModel::new(AdrConfig::default()).map_err(|e| e.to_string())?;
    let (rank, os) = (50, 20);
    let s = build_quadratic(&mut model, &measure, rank, os, 0).map_err(|e| e.to_string())?;
    let nl = model.last_newton_iterations().ok_or("no Newton solve recorded")?;
    let c = model.counter();
    let expect_total = nl + 1 + 4 * (rank + os);
    check(
        c.total() == expect_total && c.unique_systems == nl + 2 && s.solves == c,
        format!(
            "n_L = {nl}: {} solves (expected {expect_total}), {} systems (expected {})",
            c.total(),
            c.unique_systems,
            nl + 2
        ),
    )
}

fn tv_dimension_independence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let rows = tv_check(seed, &[3, 5, 7], 0.5).map_err(|e| e.to_string())?;
        for r in rows {
            worst = worst.max(r.abs_diff).max(r.recursive_abs_diff);
        }
    }
    check(worst <= 2e-3, format!("largest |numeric - predicted| over 4 problems: {worst:.1e}"))
}

/// Random `C`, `g` and `C^{-1}`-orthonormal `phi` in `R^8`.
fn random_surrogate(seed: u64) -> TaylorSurrogate {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let rank = r.random_range(1..=5);
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| r.sample(StandardNormal));
    let c = &a * a.transpose() + DMatrix::identity(n, n);
    let l = c.clone().cholesky().expect("SPD").l();
    let z = DMatrix::<f64>::from_fn(n, rank, |_, _| r.sample(StandardNormal));
    let phi = &l * z.qr().q();
    let cov = DenseCovariance::new(c.clone()).expect("SPD");
    let g: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    let cols: Vec<Vec<f64>> = (0..rank).map(|j| phi.column(j).iter().copied().collect()).collect();
    let g_phi = cols.iter().map(|p| p.iter().zip(&g).map(|(x, y)| x * y).sum()).collect();
    TaylorSurrogate {
        order: Order::Quadratic,
        anchor: vec![0.0; n],
        q0: r.random_range(-1.0..1.0),
        g_cg: g.iter().zip(cov.apply(&g)).map(|(x, y)| x * y).sum(),
        gradient: g,
        eigenvalues: (0..rank).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect(),
        dual_vectors: cols.iter().map(|p| cov.apply_inv(p)).collect(),
        eigenvectors: cols,
        g_phi,
        oversampling: 0,
        solves: Default::default(),
    }
}

fn sampler_moments() -> Outcome {
    let count = 1_000_000;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let s = random_surrogate(seed);
        let mean = s.q0 + 0.5 * s.eigenvalues.iter().sum::<f64>();
        let var = s.g_cg + 0.5 * s.eigenvalues.iter().map(|l| l * l).sum::<f64>();
        let x = sample_lowrank_quadratic(&s, seed, count).map_err(|e| e.to_string())?;
        let n = count as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|q| (q - m).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = x.iter().map(|q| (q - m).powi(4)).sum::<f64>() / n;
        let z_mean = (m - mean).abs() / (v / n).sqrt();
        let z_var = (v - var).abs() / ((m4 - v * v) / n).sqrt();
        worst = worst.max(z_mean).max(z_var);
    }
    check(worst <= 3.0, format!("largest deviation over 5 configurations: {worst:.2} standard errors"))
}

/// Simpson's rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn analytic_cvar() -> Outcome {
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let alpha = 0.95;
    let upper = 12.0;
    let (mut lo, mut hi) = (0.0, 4.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if simpson(pdf, mid, upper, 20_000) > 1.0 - alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = simpson(|x| x * pdf(x), lo, upper, 20_000) / (1.0 - alpha);
    let got = cvar_gaussian_analytic(0.0, 1.0, alpha).map_err(|e| e.to_string())?.value;
    let standard_ok = (got - oracle).abs() <= 1e-6 && (got - 2.0627).abs() < 5e-5;

    let (w, mu, sd) = ([0.3, 0.7], [-1.0, 2.0], [0.5, 1.5]);
    let cfg = CVaRConfig::with_alpha(alpha);
    let (mix, _) = cvar_gaussian_mixture(&mu, &sd, &w, &cfg).map_err(|e| e.to_string())?;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let n = 10_000_000;
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let k = usize::from(r.random::<f64>() >= w[0]);
            mu[k] + sd[k] * r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    x.sort_by(f64::total_cmp);
    let t = x[(alpha * n as f64).ceil() as usize - 1];
    let excess: Vec<f64> = x.iter().map(|v| (v - t).max(0.0) / (1.0 - alpha)).collect();
    let e_mean = excess.iter().sum::<f64>() / n as f64;
    let e_var = excess.iter().map(|e| (e - e_mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let mc = t + e_mean;
    let se = (e_var / n as f64).sqrt();
    check(
        standard_ok && (mix - mc).abs() <= 3.0 * se,
        format!(
            "standard normal {got:.9} vs {oracle:.9}; mixture {mix:.5} vs Monte Carlo {mc:.5} ({:.2} SE)",
            (mix - mc).abs() / se
        ),
    )
}

fn find<'a>(records: &'a [Record], method: &str, kind: &str) -> Result<&'a Record, String> {
    records
        .iter()
        .find(|r| r.method == method && r.kind == kind)
        .ok_or_else(|| format!("no {method} {kind} record"))
}

fn abs_err(r: &Record) -> Result<f64, String> {
    r.rel_error.map(f64::abs).ok_or_else(|| "missing reference".to_string())
}

fn estimator_quality() -> Outcome {
    let cfg = adr_config();
    let start = Instant::now();
    let run = run_estimate(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut ok = secs <= 900.0;
    let mut parts = Vec::new();
    for kind in ["mean", "sd", "cvar"] {
        let gm = abs_err(find(&run.records, "quad-gm", kind)?)?;
        let single = abs_err(find(&run.records, "quad-single", kind)?)?;
        ok &= gm <= 0.02 && gm < single;
        parts.push(format!("{kind} {:.2}% (single {:.1}%)", 100.0 * gm, 100.0 * single));
    }
    check(ok, format!("quad-gm N=39: {}; {secs:.0}s", parts.join(", ")))
}

fn monotone_improvement() -> Outcome {
    let mut cfg = adr_config();
    cfg.risk.kinds = vec![gmtaylor_core::risk::RiskKind::Cvar];
    let rows = run_sweep(&cfg, SweepAxis::Nmix, &[1.0, 7.0, 19.0, 39.0]).map_err(|e| e.to_string())?;
    let err = |method: &str, n: usize| -> Result<f64, String> {
        rows.iter()
            .find(|r| r.method == method && r.n_mix == n)
            .and_then(|r| r.rel_error)
            .map(f64::abs)
            .ok_or_else(|| format!("no {method} row at N = {n}"))
    };
    let (q1, q39) = (err("quad-gm", 1)?, err("quad-gm", 39)?);
    let (l1, l39) = (err("lin-gm", 1)?, err("lin-gm", 39)?);
    let path: Vec<String> = [1, 7, 19, 39]
        .iter()
        .map(|&n| err("quad-gm", n).map(|e| format!("{:.1}%", 100.0 * e)))
        .collect::<Result<_, _>>()?;
    check(
        q39 <= q1 && l1 >= 2.0 * l39,
        format!(
            "quad-gm CVaR error {}; lin-gm {:.1}% -> {:.1}%",
            path.join(" -> "),
            100.0 * l1,
            100.0 * l39
        ),
    )
}

fn split_library() -> Outcome {
    // N = 1 is the target itself (TV 0), so the sequence is checked from N = 3
    let identity = tv_1d(&optimize_split(1, 0.5).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut last = 0.0;
    for n in (3..=39).step_by(2) {
        let s = optimize_split(n, 0.5).map_err(|e| e.to_string())?;
        let tv = tv_1d(&s).map_err(|e| e.to_string())?;
        monotone &= tv <= prev;
        prev = tv;
        last = tv;
    }
    check(
        identity == 0.0 && monotone && last <= 0.05,
        format!("N = 1 TV {identity:.1e}; nonincreasing over N = 3..39: {monotone}; N = 39 TV {last:.1e}"),
    )
}

fn quadratic_exactness() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.measure.dim = 1;
    cfg.measure.points = 24;
    cfg.measure.corr_len = 0.3;
    cfg.measure.calibration = VarianceCalibration::Continuum;
    cfg.model = ModelConfig::Analytic {
        a_scale: 0.0,
        terms: vec![
            TermConfig { beta: 2.0, seed: 1 },
            TermConfig { beta: -0.7, seed: 2 },
            TermConfig { beta: 0.4, seed: 3 },
        ],
    };
    let analytic = match build_model(&cfg).map_err(|e| e.to_string())? {
        pipeline::AnyModel::Analytic(m) => m,
        _ => unreachable!(),
    };
    let base = build_measure(&cfg.measure).map_err(|e| e.to_string())?;
    let n = base.dim();
    let mut dirs = vec![kle(base.covariance().as_ref(), 1).map_err(|e| e.to_string())?.vectors()[0].clone()];
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2 {
        dirs.push((0..n).map(|_| r.sample(StandardNormal)).collect());
    }
    let mut worst = 0.0f64;
    for (ns, dir) in [3usize, 7, 11].iter().zip(&dirs) {
        let split = optimize_split(*ns, 0.5).map_err(|e| e.to_string())?;
        let mix = split_along_direction(&base, dir, &split).map_err(|e| e.to_string())?;
        let mut m: AnalyticModel = analytic.clone();
        let surs = mix
            .components()
            .iter()
            .map(|c| build_quadratic(&mut m, c.measure(), n, 0, 0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let w = mix.weights();
        let mean = mean_gm(&surs, &w).map_err(|e| e.to_string())?.value;
        let var = variance_gm(&surs, &w).map_err(|e| e.to_string())?;
        let (em, ev) = mixture_moments(&analytic, &mix).map_err(|e| e.to_string())?;
        worst = worst.max(((mean - em) / em).abs()).max(((var - ev) / ev).abs());
    }
    check(worst <= 1e-8, format!("largest relative moment error over 3 splits: {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("derivative consistency", derivatives),
        ("solve accounting", solve_accounting),
        ("dimension-independent TV", tv_dimension_independence),
        ("fast sampler moments", sampler_moments),
        ("analytic CVaR", analytic_cvar),
        ("estimator quality at 32x32", estimator_quality),
        ("improvement with N_mix", monotone_improvement),
        ("split library quality", split_library),
        ("quadratic-map exactness", quadratic_exactness),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} PASS  {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

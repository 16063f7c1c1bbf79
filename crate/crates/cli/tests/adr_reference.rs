//! Estimates on the 32x32 ADR problem against the cached Monte Carlo
//! reference in `tests/data/mc`.

use std::path::PathBuf;

use gmtaylor::config::{ExperimentConfig, SweepAxis};
use gmtaylor::pipeline::{run_estimate, run_sweep, SweepRow};

fn config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/adr32_l2.toml");
    ExperimentConfig::load(&path).unwrap()
}

fn error(rows: &[SweepRow], method: &str, kind: &str, point: f64) -> f64 {
    rows.iter()
        .find(|r| r.method == method && r.kind == kind && r.point == point)
        .and_then(|r| r.rel_error)
        .unwrap_or_else(|| panic!("no {method} {kind} row at {point}"))
        .abs()
}

#[test]
fn hep_quadratic_mixture_beats_linear_mixture() {
    let run = run_estimate(&config()).unwrap();
    let err = |m: &str| {
        run.records
            .iter()
            .find(|r| r.method == m && r.kind == "cvar")
            .and_then(|r| r.rel_error)
            .unwrap()
            .abs()
    };
    assert!(err("quad-gm") < err("lin-gm"), "{} vs {}", err("quad-gm"), err("lin-gm"));
    // solve counts travel with every record built from the PDE
    assert!(run.records.iter().all(|r| r.solve_count > 0));
}

#[test]
fn more_components_do_not_hurt() {
    let ns: Vec<f64> = (1..=39).step_by(2).map(f64::from).collect();
    let rows = run_sweep(&config(), SweepAxis::Nmix, &ns).unwrap();
    for kind in ["mean", "sd", "cvar"] {
        let (first, last) = (error(&rows, "quad-gm", kind, 1.0), error(&rows, "quad-gm", kind, 39.0));
        assert!(last <= first, "{kind}: {last} > {first}");
    }
}

#[test]
fn errors_consistent_over_alpha() {
    let alphas = [0.9, 0.95, 0.99, 0.995, 0.999];
    let rows = run_sweep(&config(), SweepAxis::Alpha, &alphas).unwrap();
    let errs: Vec<f64> = alphas.iter().map(|&a| error(&rows, "quad-gm", "cvar", a)).collect();
    let max = errs.iter().cloned().fold(0.0, f64::max);
    let min = errs.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max / min <= 10.0, "{errs:?}");
}

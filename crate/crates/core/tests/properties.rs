use std::sync::Arc;

use gmtaylor_core::measure::{matern_covariance, Covariance, DenseCovariance, GaussianMeasure, Grid, VarianceCalibration};
use gmtaylor_core::mixture::split_along_direction;
use gmtaylor_core::model::{mixture_moments, AnalyticModel};
use gmtaylor_core::risk::{cvar_gaussian_analytic, mean_gm, variance_gm, weighted_superquantile};
use gmtaylor_core::rng;
use gmtaylor_core::split1d::{equispaced_split, l2_objective, optimize_split, tv_1d};
use gmtaylor_core::taylor::{build_quadratic, mixture_surrogates, Order, SurrogateSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn standard_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn split_tv_matches_sampling() {
    // TV = E_0[(1 - mix / pi_0)^+] under draws from N(0, 1)
    let split = optimize_split(3, 0.5).unwrap();
    let mut r = rng::stream(17, 0);
    let mut x = vec![0.0; 10_000_000];
    rng::fill_standard_normal(&mut r, &mut x);
    let mc = x.iter().map(|&v| (1.0 - split.density(v) / standard_pdf(v)).max(0.0)).sum::<f64>() / x.len() as f64;
    let tv = tv_1d(&split).unwrap();
    assert!((tv - mc).abs() < 1e-3, "{tv} vs {mc}");
}

#[test]
fn lognormal_mixture_beats_single_expansion() {
    let grid = Grid::new(1, 32).unwrap();
    let cov = Arc::new(matern_covariance(grid, 0.2, 1.0, VarianceCalibration::Continuum).unwrap());
    let base = GaussianMeasure::centered(cov.clone());
    let n = base.dim();
    let ca = cov.apply(&vec![1.0; n]);
    let scale = 1.0 / ca.iter().sum::<f64>().sqrt();
    let mut model = AnalyticModel::lognormal(vec![scale; n]).unwrap();
    let (exact, _) = model.moments(&base).unwrap();

    let single = build_quadratic(&mut model, &base, 6, 6, 0).unwrap();
    let single_err = (mean_gm(std::slice::from_ref(&single), &[1.0]).unwrap().value - exact).abs() / exact;

    let dir = single.eigenvectors[0].clone();
    let mix = split_along_direction(&base, &dir, &optimize_split(39, 0.5).unwrap()).unwrap();
    let spec = SurrogateSpec {
        order: Order::Quadratic,
        rank: 6,
        oversampling: 6,
        seed: 0,
    };
    let surs = mixture_surrogates(&mut model, &mix, &spec).unwrap();
    let gm_err = (mean_gm(&surs, &mix.weights()).unwrap().value - exact).abs() / exact;
    assert!(gm_err < 0.1 * single_err, "{gm_err} vs {single_err}");
}

fn spd(seed: u64, n: usize) -> DenseCovariance {
    let mut r = rng::stream(seed, 0);
    let mut g = vec![0.0; n * n];
    rng::fill_standard_normal(&mut r, &mut g);
    let a = DMatrix::from_vec(n, n, g);
    DenseCovariance::new(&a * a.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimized_split_beats_equispaced(n in 1usize..12, half_width in 1.0f64..4.0) {
        let best = optimize_split(n, 0.5).unwrap();
        let eq = equispaced_split(n, 0.5, half_width).unwrap();
        let f = |s: &gmtaylor_core::split1d::Split1D| l2_objective(s.weights(), s.means(), s.sigma());
        prop_assert!(f(&best) <= f(&eq) + 1e-12);
    }

    #[test]
    fn gaussian_cvar_is_affine(mu in -5.0f64..5.0, sigma in 0.01f64..10.0, alpha in 0.01f64..0.999) {
        let unit = cvar_gaussian_analytic(0.0, 1.0, alpha).unwrap().value;
        let got = cvar_gaussian_analytic(mu, sigma, alpha).unwrap().value;
        prop_assert!((got - (mu + sigma * unit)).abs() <= 1e-10 * (1.0 + got.abs()));
        prop_assert!(got >= mu);
    }

    #[test]
    fn superquantile_bounds(xs in prop::collection::vec((-100.0f64..100.0, 0.01f64..1.0), 1..60), a in 0.0f64..0.99, b in 0.0f64..0.99) {
        let total: f64 = xs.iter().map(|p| p.1).sum();
        let mean = xs.iter().map(|p| p.0 * p.1).sum::<f64>() / total;
        let max = xs.iter().map(|p| p.0).fold(f64::MIN, f64::max);
        let mut s: Vec<(f64, f64)> = xs.iter().map(|&(x, w)| (x, w / total)).collect();
        let (lo, hi) = (a.min(b), a.max(b));
        let (_, c_lo) = weighted_superquantile(&mut s, lo);
        let (_, c_hi) = weighted_superquantile(&mut s, hi);
        prop_assert!(c_lo >= mean - 1e-9 && c_hi <= max + 1e-9);
        prop_assert!(c_hi >= c_lo - 1e-9);
    }

    #[test]
    fn quadratic_maps_are_reproduced(seed in 0u64..1000, n_mix in 1usize..8, betas in prop::collection::vec(-2.0f64..2.0, 1..4)) {
        let n = 6;
        let cov = Arc::new(spd(seed, n));
        let base = GaussianMeasure::centered(cov);
        let mut r = rng::stream(seed, 1);
        let terms = betas
            .iter()
            .map(|&b| {
                let mut v = vec![0.0; n];
                rng::fill_standard_normal(&mut r, &mut v);
                (b, v)
            })
            .collect();
        let mut model = AnalyticModel::quadratic(n, terms).unwrap();
        let mut dir = vec![0.0; n];
        rng::fill_standard_normal(&mut r, &mut dir);
        let mix = split_along_direction(&base, &dir, &optimize_split(n_mix, 0.5).unwrap()).unwrap();
        let spec = SurrogateSpec { order: Order::Quadratic, rank: n, oversampling: 0, seed };
        let surs = mixture_surrogates(&mut model, &mix, &spec).unwrap();
        let w = mix.weights();
        let (em, ev) = mixture_moments(&model, &mix).unwrap();
        let m = mean_gm(&surs, &w).unwrap().value;
        let v = variance_gm(&surs, &w).unwrap();
        prop_assert!((m - em).abs() <= 1e-8 * em.abs().max(1.0));
        prop_assert!((v - ev).abs() <= 1e-8 * ev.abs().max(1.0));
    }
}

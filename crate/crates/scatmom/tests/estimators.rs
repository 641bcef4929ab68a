//! GMM and regression estimators on simulated data.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scatmom::estimation::{
    gmm_one_step, gmm_two_step, log_covariance_regression, log_spaced_lags, scattering_slope_regression,
    wavelet_moment_regression, EstimationError, MomentCondition, SearchOptions,
};
use scatmom::processes::{simulate, Model, ProcessSpec};
use scatmom::scattering::{normalize, scatter, ScatterConfig};
use scatmom::signal::TimeSeries;
use scatmom::wavelet::FilterBank;

fn ensemble(model: Model, len: usize, seed: u64, n: usize) -> TimeSeries {
    simulate(&ProcessSpec::new(model, len, seed, n)).unwrap().series
}

fn condition(data: &TimeSeries, model: Model, j: i32, n_sim: usize, seed: u64) -> MomentCondition {
    let bank = Arc::new(FilterBank::default_for(1, j + 1).unwrap());
    MomentCondition::from_series(data, bank, ScatterConfig::new(2, 0, j), 1, model, Some(n_sim), seed).unwrap()
}

#[test]
fn one_step_recovers_hurst_exponent() {
    let model = Model::Fbm { hurst: 0.7 };
    let data = ensemble(model, 1 << 14, 1, 64);
    let mc = condition(&data, model, 6, 64, 99);
    let fit = gmm_one_step(&mc, &SearchOptions::new(0.05, 0.95)).unwrap();
    assert!((fit.theta - 0.7).abs() < 0.03, "H = {}", fit.theta);
}

#[test]
fn injected_model_moments_give_exact_minimizer() {
    // Data equal to the simulated moments at a grid point θ*: the objective
    // is exactly zero there and nowhere lower.
    let opts = SearchOptions::new(0.1, 0.3);
    let theta = 0.1 + 0.2 * 4.0 / 10.0;
    let model = Model::MrmStationary {
        lambda2: theta,
        integral_scale: 8,
    };
    let (len, n_sim, seed) = (1 << 10, 16, 5);
    let data = ensemble(model, len, seed, n_sim);
    let mc = condition(&data, model, 4, n_sim, seed);
    let fit = gmm_one_step(&mc, &opts).unwrap();
    assert_eq!(fit.objective, 0.0);
    assert_eq!(fit.theta, theta);
}

#[test]
fn empty_bounds_are_rejected() {
    let model = Model::Fbm { hurst: 0.5 };
    let mc = condition(&ensemble(model, 1 << 10, 1, 4), model, 4, 4, 1);
    assert!(matches!(
        gmm_one_step(&mc, &SearchOptions::new(0.5, 0.5)),
        Err(EstimationError::EmptyBounds { .. })
    ));
}

#[test]
fn fits_are_bitwise_reproducible() {
    let model = Model::Mrw {
        lambda2: 0.05,
        integral_scale: 9,
    };
    let data = ensemble(model, 1 << 10, 3, 16);
    let run = || {
        let mc = condition(&data, model, 4, 64, 11);
        gmm_two_step(&mc, &SearchOptions::new(0.01, 0.2)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.theta_hat.to_bits(), b.theta_hat.to_bits());
    assert_eq!(a.objective_trace.len(), b.objective_trace.len());
    for (x, y) in a.objective_trace.iter().zip(&b.objective_trace) {
        assert_eq!(x.0.to_bits(), y.0.to_bits());
        assert_eq!(x.1.to_bits(), y.1.to_bits());
    }
    assert_eq!(a.chi2_red.to_bits(), b.chi2_red.to_bits());
}

#[test]
fn regressions_find_no_intermittency_in_gaussian_signals() {
    let bank = FilterBank::default_for(1, 10).unwrap();
    let fbm = ensemble(Model::Fbm { hurst: 0.6 }, 1 << 20, 2, 1);
    let w = wavelet_moment_regression(&fbm, &bank, 2, 8).unwrap();
    assert!(w.estimate.abs() < 0.01, "wavelet λ² on fBm {}", w.estimate);
    let lags = log_spaced_lags(8, 512);
    let lc = log_covariance_regression(&fbm, &bank, 1, &lags).unwrap();
    assert!(lc.estimate.abs() < 0.01, "log-cov λ² on fBm {}", lc.estimate);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let white: Vec<f64> = (0..1 << 20).map(|_| StandardNormal.sample(&mut rng)).collect();
    let white = TimeSeries::new(white, 1.0).unwrap();
    let lc = log_covariance_regression(&white, &bank, 1, &lags).unwrap();
    assert!(lc.estimate.abs() < 0.01, "log-cov λ² on white noise {}", lc.estimate);

    assert!(matches!(
        wavelet_moment_regression(&fbm, &bank, 2, 3),
        Err(EstimationError::TooFewPoints { .. })
    ));
}

#[test]
fn slope_regression_on_brownian_motion() {
    let bank = FilterBank::default_for(1, 14).unwrap();
    let bm = ensemble(Model::Fbm { hurst: 0.5 }, 1 << 20, 6, 1);
    let ns = normalize(&scatter(&bm, &bank, &ScatterConfig::new(2, 0, 13)).unwrap()).unwrap();
    let fit = scattering_slope_regression(&ns, 3).unwrap();
    assert!(
        (fit.order2_slope + 0.5).abs() < 0.05,
        "order-2 slope {}",
        fit.order2_slope
    );
    assert!((fit.alpha - 2.0).abs() < 0.1, "alpha {}", fit.alpha);
    assert!(matches!(
        scattering_slope_regression(&ns, 40),
        Err(EstimationError::TooFewPoints { .. })
    ));
}

#[test]
fn multifractal_walk_is_preferred_on_its_own_data() {
    // MRW data fitted by three families: the true family has the smallest
    // reduced J statistic and recovers λ².
    let lambda2 = 0.08;
    let truth = Model::Mrw {
        lambda2,
        integral_scale: 10,
    };
    let data = ensemble(truth, 1 << 11, 21, 160);
    let fits: Vec<(&str, f64, f64)> = [
        (truth, (0.005, 0.3)),
        (Model::Fbm { hurst: 0.5 }, (0.05, 0.95)),
        (Model::Levy { alpha: 1.5 }, (1.05, 2.0)),
    ]
    .into_iter()
    .map(|(model, (lo, hi))| {
        let mc = condition(&data, model, 5, 640, 3);
        let fit = gmm_two_step(&mc, &SearchOptions::new(lo, hi)).unwrap();
        (model.family(), fit.theta_hat, fit.chi2_red)
    })
    .collect();
    let (_, theta, chi_mrw) = fits[0];
    assert!((theta - lambda2).abs() < 0.02, "λ̂² = {theta}");
    for &(family, _, chi) in &fits[1..] {
        assert!(chi_mrw < chi, "mrw χ² {chi_mrw} not below {family} χ² {chi}");
    }
}

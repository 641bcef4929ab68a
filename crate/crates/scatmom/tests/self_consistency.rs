//! Simulated-moment fits recover the parameter of their own simulations.

use std::sync::Arc;

use scatmom::estimation::{gmm_fit, MomentCondition, SearchOptions, Weighting};
use scatmom::processes::{simulate, Model, ProcessSpec};
use scatmom::scattering::{scatter, ScatterConfig};
use scatmom::wavelet::FilterBank;

const BLOCK: usize = 1 << 10;
const BLOCKS: usize = 16;
const REPS: u64 = 20;

/// Mean and sample standard deviation of θ̂ over independent data sets.
fn monte_carlo(model: Model, bounds: (f64, f64), weighting: Weighting) -> (f64, f64) {
    let bank = Arc::new(FilterBank::default_for(1, 5).unwrap());
    let cfg = ScatterConfig::new(2, 0, 4);
    let moments = |seed| {
        let ens = simulate(&ProcessSpec::new(model, BLOCK, seed, BLOCKS)).unwrap();
        scatter(&ens.series, &bank, &cfg).unwrap()
    };
    let first = moments(500);
    let base = MomentCondition::new(
        &first,
        &first.per_block,
        model,
        BLOCK,
        16 * BLOCKS,
        7,
        Arc::clone(&bank),
        cfg,
        false,
    )
    .unwrap();
    let opts = SearchOptions::new(bounds.0, bounds.1);
    let est: Vec<f64> = (0..REPS)
        .map(|rep| {
            let sv = if rep == 0 { first.clone() } else { moments(500 + rep) };
            let mc = base.with_data(&sv, &sv.per_block).unwrap();
            gmm_fit(&mc, &opts, weighting).unwrap().theta_hat
        })
        .collect();
    let n = est.len() as f64;
    let mu = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mu, sd)
}

fn check(model: Model, bounds: (f64, f64), weighting: Weighting) {
    let truth = model.theta();
    let (mu, sd) = monte_carlo(model, bounds, weighting);
    assert!(sd > 0.0, "{}: degenerate spread", model.family());
    assert!(
        (mu - truth).abs() <= 3.0 * sd,
        "{}: mean {mu} vs {truth}, sd {sd}",
        model.family()
    );
}

#[test]
fn poisson_intensity() {
    check(Model::Poisson { intensity: 0.05 }, (0.01, 0.2), Weighting::TwoStep);
}

#[test]
fn fbm_hurst() {
    check(Model::Fbm { hurst: 0.6 }, (0.05, 0.95), Weighting::TwoStep);
}

#[test]
fn levy_alpha() {
    check(Model::Levy { alpha: 1.5 }, (1.05, 2.0), Weighting::Identity);
}

#[test]
fn cascade_lambda2() {
    let model = Model::MrmCascade {
        lambda2: 0.1,
        integral_scale: 8,
    };
    check(model, (0.02, 0.3), Weighting::TwoStep);
}

#[test]
fn stationary_mrm_lambda2() {
    let model = Model::MrmStationary {
        lambda2: 0.1,
        integral_scale: 8,
    };
    check(model, (0.02, 0.3), Weighting::TwoStep);
}

#[test]
fn multifractal_walk_lambda2() {
    let model = Model::Mrw {
        lambda2: 0.1,
        integral_scale: 8,
    };
    check(model, (0.02, 0.3), Weighting::TwoStep);
}

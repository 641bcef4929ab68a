//! Wavelet transform checks against brute-force and closed-form oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use scatmom::analysis::{fit_log2_slope, pooled_tail_slope};
use scatmom::scattering::{normalize, scatter, ScatterConfig};
use scatmom::signal::TimeSeries;
use scatmom::wavelet::{
    bin_frequency, build_filter_bank, fractional_derivative, fractional_multiplier, transform, transform_scales,
    FilterBank, WaveletFamily, CENTRE,
};

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn fft_path_matches_direct_convolution() {
    let n = 256;
    let bank = FilterBank::default_for(1, 4).unwrap();
    let x = noise(n, 11);
    let w = transform(&TimeSeries::new(x.clone(), 1.0).unwrap(), &bank).unwrap();
    let mut worst: f64 = 0.0;
    for f in bank.filters() {
        let got = &w.by_scale[&f.j];
        let h = f.half_width as i64;
        for t in 0..n {
            let direct: Complex64 = (-h..=h)
                .map(|s| f.tap(s) * x[(t as i64 - s).rem_euclid(n as i64) as usize])
                .sum();
            worst = worst.max((direct - got[t]).norm());
        }
    }
    assert!(worst < 1e-10, "max abs difference {worst:e}");
}

#[test]
fn half_derivatives_compose_to_first_derivative() {
    let ts = TimeSeries::new(noise(1024, 3), 1.0).unwrap();
    let twice = fractional_derivative(&fractional_derivative(&ts, 0.5).unwrap(), 0.5).unwrap();
    let once = fractional_derivative(&ts, 1.0).unwrap();
    let worst = twice
        .samples()
        .iter()
        .zip(once.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "max abs difference {worst:e}");
}

#[test]
fn derivative_then_wavelet_equals_scaled_derivative_wavelet() {
    // d^α X ★ ψ_j = 2^{−αj} X ★ ψ^α_j with Ψ^α_j(ω) = (i 2^j ω)^α Ψ_j(ω).
    let n = 4096;
    let alpha = 0.3;
    let bank = FilterBank::default_for(1, 8).unwrap();
    let ts = TimeSeries::new(noise(n, 5), 1.0).unwrap();
    let lhs = transform(&fractional_derivative(&ts, alpha).unwrap(), &bank).unwrap();
    let mult = fractional_multiplier(n, alpha);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<Complex64> = ts.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut spec);
    for f in bank.filters() {
        let scale = 2f64.powi(f.j);
        let psi_alpha: Vec<Complex64> = f
            .response(n)
            .iter()
            .zip(&mult)
            .map(|(r, m)| r * m * scale.powf(alpha))
            .collect();
        let mut buf: Vec<Complex64> = spec.iter().zip(&psi_alpha).map(|(a, b)| a * b).collect();
        inv.process(&mut buf);
        let worst = buf
            .iter()
            .zip(&lhs.by_scale[&f.j])
            .map(|(r, l)| (r / n as f64 * scale.powf(-alpha) - l).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "j={} difference {worst:e}", f.j);
    }
}

#[test]
fn energy_identity_on_band_limited_noise() {
    // Noise whose spectrum lies inside the covered octaves, so the
    // Littlewood–Paley sum applies to all of its energy.
    let n = 1 << 18;
    let (j_min, m) = (1, 10);
    let bank = build_filter_bank(1 << 14, j_min, m, WaveletFamily::LogGaussian).unwrap();
    let lo = CENTRE * 2f64.powf(-(m as f64) + 1.5);
    let hi = CENTRE * 2f64.powf(-(j_min as f64) - 1.5);
    let mut spec: Vec<Complex64> = noise(n, 9).iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spec);
    for (k, c) in spec.iter_mut().enumerate() {
        let w = bin_frequency(k, n).abs();
        if !(lo..=hi).contains(&w) {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    let x: Vec<f64> = spec.iter().map(|c| c.re / n as f64).collect();
    let mu = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
    let w = transform(&TimeSeries::new(x, 1.0).unwrap(), &bank).unwrap();
    let energy: f64 = w
        .by_scale
        .values()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64)
        .sum();
    assert!((energy / var - 1.0).abs() < 0.05, "energy {energy} vs variance {var}");
}

#[test]
fn transform_is_linear_in_amplitude() {
    let bank = FilterBank::default_for(1, 6).unwrap();
    let ts = TimeSeries::new(noise(2048, 1), 1.0).unwrap();
    let base = transform_scales(&ts, &bank, 1, 6).unwrap();
    let scaled = transform_scales(&ts.scaled(4.0), &bank, 1, 6).unwrap();
    for (j, c) in &base.by_scale {
        for (a, b) in c.iter().zip(&scaled.by_scale[j]) {
            assert_eq!(a * 4.0, *b);
        }
    }
}

#[test]
fn white_noise_first_and_second_order_slopes() {
    let bank = FilterBank::default_for(1, 13).unwrap();
    let ts = TimeSeries::new(noise(1 << 20, 21), 1.0).unwrap();
    let sv = scatter(&ts, &bank, &ScatterConfig::new(2, 0, 12)).unwrap();
    let first = fit_log2_slope(&sv.order1, (2, 8)).unwrap();
    assert!((first.slope + 0.5).abs() < 0.03, "first-order slope {}", first.slope);
    let mut ns = normalize(&sv).unwrap();
    ns.order2_norm.retain(|&(a, _), _| a <= 4);
    let (tail, _) = pooled_tail_slope(&ns, 3).unwrap();
    assert!((tail + 0.5).abs() < 0.05, "second-order tail slope {tail}");
}

//! Seedable simulators for Poisson, fractional Brownian motion, symmetric
//! α-stable Lévy, log-normal multifractal measures and multifractal random
//! walks.
//!
//! Every realization draws from its own ChaCha8 stream keyed by
//! (seed, realization index), so ensembles are identical whatever the
//! thread schedule.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::next_pow2;
use crate::signal::{SignalError, TimeSeries};

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("{name}={value} outside {range}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("length must be at least 2, got {0}")]
    TooShort(usize),
    #[error("n_realizations must be positive")]
    NoRealizations,
    #[error("circulant embedding is not nonnegative definite (min eigenvalue {min_eigenvalue:e} at embedding length {embedding})")]
    Embedding { min_eigenvalue: f64, embedding: usize },
    #[error("moment of order {q} diverges for alpha={alpha}")]
    DivergentMoment { q: f64, alpha: f64 },
    #[error("the {0} family has no scaling exponent")]
    NoScaling(&'static str),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Process family with its parameters; `integral_scale` is the exponent L of
/// the integral scale 2^L in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    Poisson {
        intensity: f64,
    },
    Fbm {
        hurst: f64,
    },
    #[serde(rename = "levy_stable")]
    Levy {
        alpha: f64,
    },
    MrmCascade {
        lambda2: f64,
        integral_scale: u32,
    },
    MrmStationary {
        lambda2: f64,
        integral_scale: u32,
    },
    Mrw {
        lambda2: f64,
        integral_scale: u32,
    },
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Poisson { .. } => "poisson",
            Self::Fbm { .. } => "fbm",
            Self::Levy { .. } => "levy_stable",
            Self::MrmCascade { .. } => "mrm_cascade",
            Self::MrmStationary { .. } => "mrm_stationary",
            Self::Mrw { .. } => "mrw",
        }
    }

    /// The single free parameter: λ, H, α or λ².
    pub fn theta(&self) -> f64 {
        match *self {
            Self::Poisson { intensity } => intensity,
            Self::Fbm { hurst } => hurst,
            Self::Levy { alpha } => alpha,
            Self::MrmCascade { lambda2, .. } | Self::MrmStationary { lambda2, .. } | Self::Mrw { lambda2, .. } => {
                lambda2
            }
        }
    }

    pub fn theta_name(&self) -> &'static str {
        match self {
            Self::Poisson { .. } => "intensity",
            Self::Fbm { .. } => "hurst",
            Self::Levy { .. } => "alpha",
            _ => "lambda2",
        }
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        let mut m = *self;
        match &mut m {
            Self::Poisson { intensity } => *intensity = theta,
            Self::Fbm { hurst } => *hurst = theta,
            Self::Levy { alpha } => *alpha = theta,
            Self::MrmCascade { lambda2, .. } | Self::MrmStationary { lambda2, .. } | Self::Mrw { lambda2, .. } => {
                *lambda2 = theta
            }
        }
        m
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        let bad = |name, value, range| Err(ProcessError::InvalidParameter { name, value, range });
        match *self {
            Self::Poisson { intensity } if !(intensity > 0.0 && intensity.is_finite()) => {
                bad("intensity", intensity, "(0, inf)")
            }
            Self::Fbm { hurst } if !(hurst > 0.0 && hurst < 1.0) => bad("hurst", hurst, "(0, 1)"),
            Self::Levy { alpha } if !(alpha > 1.0 && alpha <= 2.0) => bad("alpha", alpha, "(1, 2]"),
            Self::MrmCascade {
                lambda2,
                integral_scale,
            }
            | Self::MrmStationary {
                lambda2,
                integral_scale,
            }
            | Self::Mrw {
                lambda2,
                integral_scale,
            } => {
                if !(lambda2 > 0.0 && lambda2 < 1.0) {
                    bad("lambda2", lambda2, "(0, 1)")
                } else if !(1..=30).contains(&integral_scale) {
                    bad("integral_scale", f64::from(integral_scale), "[1, 30]")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub model: Model,
    pub length: usize,
    pub seed: u64,
    pub n_realizations: usize,
}

impl ProcessSpec {
    pub fn new(model: Model, length: usize, seed: u64, n_realizations: usize) -> Self {
        Self {
            model,
            length,
            seed,
            n_realizations,
        }
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        self.model.validate()?;
        if self.length < 2 {
            return Err(ProcessError::TooShort(self.length));
        }
        if self.n_realizations == 0 {
            return Err(ProcessError::NoRealizations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngTrace {
    pub realization: usize,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEnsemble {
    pub series: TimeSeries,
    pub spec: ProcessSpec,
    pub rng_trace: Vec<RngTrace>,
}

pub fn realization_rng(seed: u64, realization: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization as u64);
    rng
}

pub fn simulate(spec: &ProcessSpec) -> Result<SimulatedEnsemble, ProcessError> {
    spec.validate()?;
    let n = spec.length;
    let gen = Generator::new(&spec.model, n)?;
    let blocks: Vec<Vec<f64>> = (0..spec.n_realizations)
        .into_par_iter()
        .map(|r| gen.realize(&mut realization_rng(spec.seed, r)))
        .collect();
    Ok(SimulatedEnsemble {
        series: TimeSeries::from_blocks(&blocks, 1.0)?,
        spec: *spec,
        rng_trace: (0..spec.n_realizations)
            .map(|r| RngTrace {
                realization: r,
                seed: spec.seed,
                stream: r as u64,
            })
            .collect(),
    })
}

/// Per-model precomputation shared by all realizations.
enum Generator {
    Poisson { n: usize, intensity: f64 },
    Fbm { field: CirculantField },
    Levy { n: usize, alpha: f64 },
    Cascade { n: usize, lambda2: f64, levels: u32 },
    Stationary { field: CirculantField, mean: f64 },
    Mrw { field: CirculantField, mean: f64 },
}

impl Generator {
    fn new(model: &Model, n: usize) -> Result<Self, ProcessError> {
        Ok(match *model {
            Model::Poisson { intensity } => Self::Poisson { n, intensity },
            Model::Fbm { hurst } => Self::Fbm {
                field: CirculantField::new(n, |k| fgn_covariance(hurst, k))?,
            },
            Model::Levy { alpha } => Self::Levy { n, alpha },
            Model::MrmCascade {
                lambda2,
                integral_scale,
            } => Self::Cascade {
                n,
                lambda2,
                levels: integral_scale,
            },
            Model::MrmStationary {
                lambda2,
                integral_scale,
            } => Self::Stationary {
                field: CirculantField::new(n, |k| log_covariance(lambda2, integral_scale, k))?,
                mean: -0.5 * log_covariance(lambda2, integral_scale, 0),
            },
            Model::Mrw {
                lambda2,
                integral_scale,
            } => Self::Mrw {
                field: CirculantField::new(n, |k| log_covariance(lambda2, integral_scale, k))?,
                mean: -0.5 * log_covariance(lambda2, integral_scale, 0),
            },
        })
    }

    fn realize(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Self::Poisson { n, intensity } => poisson_path(*n, *intensity, rng),
            Self::Fbm { field, .. } => cumsum(&field.sample(rng)),
            Self::Levy { n, alpha } => {
                let inc: Vec<f64> = (0..*n).map(|_| stable_symmetric(*alpha, rng)).collect();
                cumsum(&inc)
            }
            Self::Cascade { n, lambda2, levels } => cascade(*n, *lambda2, *levels, rng),
            Self::Stationary { field, mean } => field.sample(rng).iter().map(|w| (w + mean).exp()).collect(),
            Self::Mrw { field, mean } => {
                let dm: Vec<f64> = field.sample(rng).iter().map(|w| (w + mean).exp()).collect();
                let inc: Vec<f64> = dm
                    .iter()
                    .map(|d| d.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                cumsum(&inc)
            }
        }
    }
}

fn cumsum(x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// X(t) = #{arrivals ≤ t} with exponential inter-arrival times of rate λ.
fn poisson_path(n: usize, intensity: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut next = rng.sample::<f64, _>(Exp1) / intensity;
    let mut count = 0.0;
    (0..n)
        .map(|t| {
            while next <= t as f64 {
                count += 1.0;
                next += rng.sample::<f64, _>(Exp1) / intensity;
            }
            count
        })
        .collect()
}

/// Chambers–Mallows–Stuck sampler for a standard symmetric α-stable law.
fn stable_symmetric(alpha: f64, rng: &mut ChaCha8Rng) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = rng.sample(Exp1);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * ((v - alpha * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Dyadic log-normal cascades on consecutive trees of 2^L samples, with
/// weights exp(N(−λ² ln2 / 2, λ² ln2)) so that E[W] = 1.
fn cascade(n: usize, lambda2: f64, levels: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = (lambda2 * LN_2).sqrt();
    let mu = -0.5 * lambda2 * LN_2;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = vec![1.0];
        for _ in 0..levels {
            w = w
                .iter()
                .flat_map(|&parent| {
                    let a = parent * (mu + s * rng.sample::<f64, _>(StandardNormal)).exp();
                    let b = parent * (mu + s * rng.sample::<f64, _>(StandardNormal)).exp();
                    [a, b]
                })
                .collect();
        }
        out.extend_from_slice(&w);
    }
    out.truncate(n);
    out
}

/// Autocovariance of unit-variance fractional Gaussian noise.
pub fn fgn_covariance(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k + 1.0).powf(e) + (k - 1.0).abs().powf(e) - 2.0 * k.powf(e))
}

/// E ln|k + U − V| for independent uniforms U, V on [0, 1).
pub fn mean_log_distance(k: usize) -> f64 {
    if k >= 64 {
        let k = k as f64;
        return k.ln() - 1.0 / (12.0 * k * k) - 1.0 / (60.0 * k.powi(4));
    }
    let phi = |y: f64| if y == 0.0 { 0.0 } else { 0.5 * y * y * y.abs().ln() };
    let k = k as f64;
    phi(k + 1.0) - 2.0 * phi(k) + phi(k - 1.0) - 1.5
}

/// Covariance of the log-volatility field between samples k apart:
/// λ² (L ln2 − E ln|k + U − V|)⁺, the cell average of λ² ln⁺(2^L/|τ|).
pub fn log_covariance(lambda2: f64, integral_scale: u32, k: usize) -> f64 {
    lambda2 * (f64::from(integral_scale) * LN_2 - mean_log_distance(k)).max(0.0)
}

/// Stationary Gaussian sequence of length n sampled by circulant embedding.
struct CirculantField {
    n: usize,
    sqrt_eig: Vec<f64>,
}

impl CirculantField {
    fn new(n: usize, cov: impl Fn(usize) -> f64) -> Result<Self, ProcessError> {
        let base = 2 * next_pow2(n);
        let mut last_min = 0.0;
        for m in [base, 2 * base, 4 * base] {
            let mut c: Vec<Complex64> = (0..m).map(|k| Complex64::new(cov(k.min(m - k)), 0.0)).collect();
            FftPlanner::new().plan_fft_forward(m).process(&mut c);
            let eig: Vec<f64> = c.iter().map(|z| z.re).collect();
            let max = eig.iter().copied().fold(f64::MIN, f64::max);
            let min = eig.iter().copied().fold(f64::MAX, f64::min);
            last_min = min;
            if min >= -1e-8 * max {
                let scale = 1.0 / m as f64;
                return Ok(Self {
                    n,
                    sqrt_eig: eig.iter().map(|&l| (l.max(0.0) * scale).sqrt()).collect(),
                });
            }
        }
        Err(ProcessError::Embedding {
            min_eigenvalue: last_min,
            embedding: 4 * base,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = self.sqrt_eig.len();
        let mut z: Vec<Complex64> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex64::new(a, b) * s
            })
            .collect();
        FftPlanner::new().plan_fft_forward(m).process(&mut z);
        z[..self.n].iter().map(|c| c.re).collect()
    }
}

/// Scaling exponent ζ(q) of E|X★ψ_j|^q ∝ 2^{jζ(q)}.
pub fn zeta(model: &Model, q: f64) -> Result<f64, ProcessError> {
    model.validate()?;
    match *model {
        Model::Poisson { .. } => Err(ProcessError::NoScaling("poisson")),
        Model::Fbm { hurst } => Ok(q * hurst),
        Model::Levy { alpha } => {
            if q >= alpha {
                Err(ProcessError::DivergentMoment { q, alpha })
            } else {
                Ok(q / alpha)
            }
        }
        Model::MrmCascade { lambda2, .. } | Model::MrmStationary { lambda2, .. } => {
            Ok((1.0 + lambda2 / 2.0) * q - lambda2 / 2.0 * q * q)
        }
        // X = B(M(t)) with M of intermittency λ²: ζ_X(q) = ζ_M(q/2).
        Model::Mrw { lambda2, .. } => Ok((0.5 + lambda2 / 4.0) * q - lambda2 / 8.0 * q * q),
    }
}

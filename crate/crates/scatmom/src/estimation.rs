//! Generalized method of simulated scattering moments with a J-test, and the
//! regression baselines for intermittency and stability exponents.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::numeric::{mean, ols};
use crate::processes::{simulate, Model, ProcessError, ProcessSpec};
use crate::scattering::{
    per_block_scatter, scatter, NormalizedScattering, ScatterConfig, ScatterError, ScatteringVector,
};
use crate::signal::TimeSeries;
use crate::wavelet::{transform_scales, FilterBank, WaveletError};

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const RIDGE: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("search bounds [{lo}, {hi}] are empty")]
    EmptyBounds { lo: f64, hi: f64 },
    #[error("objective is not finite at any probe point")]
    NoFiniteObjective,
    #[error("need at least 2 per-block vectors, got {0}")]
    TooFewBlocks(usize),
    #[error("moment covariance is singular even after ridge regularization")]
    Singular,
    #[error("moment vectors have different index sets")]
    IndexMismatch,
    #[error("degrees of freedom p - d = {0} must be positive")]
    NoDegreesOfFreedom(i64),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("nonpositive moment at index {0}")]
    Nonpositive(i32),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

/// Monte-Carlo estimate of S̄Y_θ with the standard error of each entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMoments {
    pub theta: f64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Data moments plus the simulation recipe for the model moments.
pub struct MomentCondition {
    data: Vec<f64>,
    paths: Vec<Vec<i32>>,
    per_block: Vec<Vec<f64>>,
    template: Model,
    block_len: usize,
    n_sim: usize,
    sim_seed: u64,
    bank: Arc<FilterBank>,
    cfg: ScatterConfig,
    correlated: bool,
    cache: Arc<Mutex<HashMap<u64, Arc<SimMoments>>>>,
}

impl MomentCondition {
    /// Computes data moments from `ts`. Multi-block series give one vector per
    /// independent block; a single block is cut into windows spaced Δ·2^M,
    /// which are treated as correlated.
    pub fn from_series(
        ts: &TimeSeries,
        bank: Arc<FilterBank>,
        cfg: ScatterConfig,
        delta: usize,
        template: Model,
        n_sim: Option<usize>,
        sim_seed: u64,
    ) -> Result<Self, EstimationError> {
        let cfg = ScatterConfig { max_order: 2, ..cfg };
        let sv = scatter(ts, &bank, &cfg)?;
        let (per_block, correlated) = if ts.n_blocks() >= 2 {
            (sv.per_block.clone(), false)
        } else {
            (per_block_scatter(ts, &bank, &cfg, delta)?, true)
        };
        let n = per_block.len();
        Self::new(
            &sv,
            &per_block,
            template,
            ts.block_len(),
            n_sim.unwrap_or(16 * n),
            sim_seed,
            bank,
            cfg,
            correlated,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: &ScatteringVector,
        per_block: &[ScatteringVector],
        template: Model,
        block_len: usize,
        n_sim: usize,
        sim_seed: u64,
        bank: Arc<FilterBank>,
        cfg: ScatterConfig,
        correlated: bool,
    ) -> Result<Self, EstimationError> {
        let paths = data.moment_paths();
        if per_block.iter().any(|v| v.moment_paths() != paths) {
            return Err(EstimationError::IndexMismatch);
        }
        Ok(Self {
            data: data.moment_vector(),
            paths,
            per_block: per_block.iter().map(ScatteringVector::moment_vector).collect(),
            template,
            block_len,
            n_sim,
            sim_seed,
            bank,
            cfg,
            correlated,
            cache: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    /// Same model and simulation recipe with new data; simulated moments are
    /// shared with `self`.
    pub fn with_data(&self, data: &ScatteringVector, per_block: &[ScatteringVector]) -> Result<Self, EstimationError> {
        if data.moment_paths() != self.paths || per_block.iter().any(|v| v.moment_paths() != self.paths) {
            return Err(EstimationError::IndexMismatch);
        }
        Ok(Self {
            data: data.moment_vector(),
            paths: self.paths.clone(),
            per_block: per_block.iter().map(ScatteringVector::moment_vector).collect(),
            template: self.template,
            block_len: self.block_len,
            n_sim: self.n_sim,
            sim_seed: self.sim_seed,
            bank: Arc::clone(&self.bank),
            cfg: self.cfg,
            correlated: self.correlated,
            cache: Arc::clone(&self.cache),
        })
    }

    pub fn set_correlated(&mut self, correlated: bool) {
        self.correlated = correlated;
    }

    pub fn correlated(&self) -> bool {
        self.correlated
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn paths(&self) -> &[Vec<i32>] {
        &self.paths
    }

    pub fn p(&self) -> usize {
        self.data.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.per_block.len()
    }

    pub fn n_sim(&self) -> usize {
        self.n_sim
    }

    pub fn template(&self) -> Model {
        self.template
    }

    /// Ŝ Y_θ from n′ realizations; common random numbers across θ.
    pub fn simulated(&self, theta: f64) -> Result<Arc<SimMoments>, EstimationError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&theta.to_bits()) {
            return Ok(Arc::clone(hit));
        }
        let spec = ProcessSpec::new(
            self.template.with_theta(theta),
            self.block_len,
            self.sim_seed,
            self.n_sim,
        );
        let ens = simulate(&spec)?;
        let sv = scatter(&ens.series, &self.bank, &self.cfg)?;
        let blocks: Vec<Vec<f64>> = if sv.per_block.is_empty() {
            vec![sv.moment_vector()]
        } else {
            sv.per_block.iter().map(ScatteringVector::moment_vector).collect()
        };
        let n = blocks.len() as f64;
        let stderr = (0..self.p())
            .map(|i| {
                let col: Vec<f64> = blocks.iter().map(|b| b[i]).collect();
                let mu = mean(&col);
                let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (var / n).sqrt()
            })
            .collect();
        let out = Arc::new(SimMoments {
            theta,
            mean: sv.moment_vector(),
            stderr,
        });
        self.cache
            .lock()
            .expect("cache lock")
            .insert(theta.to_bits(), Arc::clone(&out));
        Ok(out)
    }

    fn residual(&self, theta: f64) -> Option<Vec<f64>> {
        let sim = self.simulated(theta).ok()?;
        let r: Vec<f64> = self.data.iter().zip(&sim.mean).map(|(a, b)| a - b).collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn objective(&self, theta: f64, weight: Option<&DMatrix<f64>>) -> f64 {
        match self.residual(theta) {
            Some(r) => quadratic_form(&r, weight),
            None => f64::INFINITY,
        }
    }
}

fn quadratic_form(r: &[f64], weight: Option<&DMatrix<f64>>) -> f64 {
    match weight {
        None => r.iter().map(|v| v * v).sum(),
        Some(w) => {
            let v = DVector::from_column_slice(r);
            (v.transpose() * w * &v)[(0, 0)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    pub rel_tol: f64,
    pub starts: usize,
}

impl SearchOptions {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            grid_points: 11,
            rel_tol: 1e-4,
            starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub theta: f64,
    pub objective: f64,
    pub trace: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Coarse grid, then golden-section refinement around up to `starts` local
/// grid minima.
pub fn minimize<F>(f: F, opts: &SearchOptions) -> Result<SearchResult, EstimationError>
where
    F: Fn(f64) -> f64 + Sync,
{
    let (lo, hi) = (opts.lo, opts.hi);
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(EstimationError::EmptyBounds { lo, hi });
    }
    let g = opts.grid_points.max(3);
    let grid: Vec<f64> = (0..g)
        .map(|i| {
            if i + 1 == g {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (g - 1) as f64
            }
        })
        .collect();
    let vals: Vec<f64> = grid.par_iter().map(|&t| f(t)).collect();
    let mut trace: Vec<(f64, f64)> = grid.iter().copied().zip(vals.iter().copied()).collect();
    if vals.iter().all(|v| !v.is_finite()) {
        return Err(EstimationError::NoFiniteObjective);
    }
    let mut minima: Vec<usize> = (0..g)
        .filter(|&i| {
            vals[i].is_finite() && (i == 0 || vals[i] <= vals[i - 1]) && (i + 1 == g || vals[i] <= vals[i + 1])
        })
        .collect();
    minima.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    minima.truncate(opts.starts.max(1));

    let mut results = Vec::new();
    for &i in &minima {
        let mut a = grid[i.saturating_sub(1)];
        let mut b = grid[(i + 1).min(g - 1)];
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let mut fc = f(c);
        let mut fd = f(d);
        trace.push((c, fc));
        trace.push((d, fd));
        while b - a > opts.rel_tol * (0.5 * (a + b)).abs().max(f64::MIN_POSITIVE) {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = f(c);
                trace.push((c, fc));
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = f(d);
                trace.push((d, fd));
            }
        }
        let mut best = (grid[i], vals[i]);
        for cand in [(c, fc), (d, fd)] {
            if cand.1 < best.1 {
                best = cand;
            }
        }
        results.push(best);
    }
    let best = results
        .iter()
        .copied()
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)))
        .expect("at least one start");
    let mut warnings = Vec::new();
    for &(t, v) in &results {
        if (t - best.0).abs() > 10.0 * opts.rel_tol * best.0.abs().max(f64::MIN_POSITIVE) {
            warnings.push(format!(
                "local minimum at theta={t:.6} (objective {v:.6e}) disagrees with best theta={:.6}",
                best.0
            ));
        }
    }
    Ok(SearchResult {
        theta: best.0,
        objective: best.1,
        trace,
        warnings,
    })
}

/// θ̂₁ = argmin ‖Ŝ X − Ŝ Y_θ‖².
pub fn gmm_one_step(mc: &MomentCondition, opts: &SearchOptions) -> Result<SearchResult, EstimationError> {
    minimize(|t| mc.objective(t, None), opts)
}

/// argmin m̂(θ) W m̂(θ)ᵀ for a fixed weight.
pub fn gmm_weighted(
    mc: &MomentCondition,
    weight: &DMatrix<f64>,
    opts: &SearchOptions,
) -> Result<SearchResult, EstimationError> {
    minimize(|t| mc.objective(t, Some(weight)), opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub matrix: DMatrix<f64>,
    pub regularized: bool,
    pub condition: f64,
}

/// Inverse of n⁻¹ Σₖ (Ŝ Xₖ − Ŝ Y_θ)(Ŝ Xₖ − Ŝ Y_θ)ᵀ, with a ridge of
/// 10⁻⁸·trace/p when the covariance is ill-conditioned.
pub fn empirical_weight(mc: &MomentCondition, theta: f64) -> Result<WeightMatrix, EstimationError> {
    let sim = mc.simulated(theta)?;
    weight_from_blocks(&mc.per_block, &sim.mean)
}

pub fn weight_from_blocks(blocks: &[Vec<f64>], center: &[f64]) -> Result<WeightMatrix, EstimationError> {
    let n = blocks.len();
    if n < 2 {
        return Err(EstimationError::TooFewBlocks(n));
    }
    let p = center.len();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for b in blocks {
        let d = DVector::from_iterator(p, b.iter().zip(center).map(|(x, c)| x - c));
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov.clone());
    let (min, max) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut regularized = false;
    let mut condition = max / min;
    let eig = if min <= 0.0 || condition > MAX_CONDITION {
        regularized = true;
        let ridge = RIDGE * cov.trace() / p as f64;
        let e = SymmetricEigen::new(cov + DMatrix::identity(p, p) * ridge);
        let (mn, mx) = e
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(mn > 0.0) {
            return Err(EstimationError::Singular);
        }
        condition = mx / mn;
        e
    } else {
        eig
    };
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let w = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
    let matrix = (&w + w.transpose()) * 0.5;
    Ok(WeightMatrix {
        matrix,
        regularized,
        condition,
    })
}

/// Upper tail of the chi-squared distribution with k degrees of freedom.
pub fn chi2_survival(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(k as f64).expect("positive dof").sf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    TwoStep,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub family: String,
    pub theta_name: String,
    pub theta_hat: f64,
    pub theta_one_step: f64,
    pub weighting: Weighting,
    pub weight_matrix: Vec<Vec<f64>>,
    pub weight_regularized: bool,
    pub chi2_red: f64,
    pub dof: usize,
    pub p_value: Option<f64>,
    pub n_blocks: usize,
    pub n_sim: usize,
    pub moment_paths: Vec<Vec<i32>>,
    pub data_moments: Vec<f64>,
    pub model_moments: Vec<f64>,
    /// Monte-Carlo standard error of each simulated moment at θ̂.
    pub model_stderr: Vec<f64>,
    pub objective_trace: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Two-step GMM with the J-test. The statistic uses the simulated-moments
/// variance factor (1 + n/n′); the p-value is omitted for correlated blocks.
pub fn gmm_two_step(mc: &MomentCondition, opts: &SearchOptions) -> Result<GmmFit, EstimationError> {
    let one = gmm_one_step(mc, opts)?;
    let w = empirical_weight(mc, one.theta)?;
    let two = gmm_weighted(mc, &w.matrix, opts)?;
    let mut trace = one.trace;
    trace.extend(two.trace);
    let mut warnings = one.warnings;
    warnings.extend(two.warnings);
    if w.regularized {
        warnings.push(format!(
            "weight matrix ridge-regularized (condition {:.3e})",
            w.condition
        ));
    }
    finish(
        mc,
        two.theta,
        one.theta,
        Weighting::TwoStep,
        w.matrix,
        w.regularized,
        trace,
        warnings,
    )
}

/// One-step GMM with identity weight; no J-test.
pub fn gmm_identity(mc: &MomentCondition, opts: &SearchOptions) -> Result<GmmFit, EstimationError> {
    let one = gmm_one_step(mc, opts)?;
    let p = mc.p();
    finish(
        mc,
        one.theta,
        one.theta,
        Weighting::Identity,
        DMatrix::identity(p, p),
        false,
        one.trace,
        one.warnings,
    )
}

pub fn gmm_fit(mc: &MomentCondition, opts: &SearchOptions, weighting: Weighting) -> Result<GmmFit, EstimationError> {
    match weighting {
        Weighting::TwoStep => gmm_two_step(mc, opts),
        Weighting::Identity => gmm_identity(mc, opts),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mc: &MomentCondition,
    theta_hat: f64,
    theta_one_step: f64,
    weighting: Weighting,
    weight: DMatrix<f64>,
    regularized: bool,
    trace: Vec<(f64, f64)>,
    warnings: Vec<String>,
) -> Result<GmmFit, EstimationError> {
    let p = mc.p();
    let d = 1usize;
    if p <= d {
        return Err(EstimationError::NoDegreesOfFreedom(p as i64 - d as i64));
    }
    let dof = p - d;
    let sim = mc.simulated(theta_hat)?;
    let n = mc.n_blocks() as f64;
    let (chi2_red, p_value) = match weighting {
        Weighting::TwoStep => {
            let r: Vec<f64> = mc.data.iter().zip(&sim.mean).map(|(a, b)| a - b).collect();
            let mc_factor = 1.0 + n / mc.n_sim as f64;
            let chi2 = n * quadratic_form(&r, Some(&weight)) / mc_factor / dof as f64;
            let pv = (!mc.correlated).then(|| chi2_survival(dof as f64 * chi2, dof));
            (chi2, pv)
        }
        Weighting::Identity => (f64::NAN, None),
    };
    Ok(GmmFit {
        family: mc.template.family().to_string(),
        theta_name: mc.template.theta_name().to_string(),
        theta_hat,
        theta_one_step,
        weighting,
        weight_matrix: (0..p).map(|i| weight.row(i).iter().copied().collect()).collect(),
        weight_regularized: regularized,
        chi2_red,
        dof,
        p_value,
        n_blocks: mc.n_blocks(),
        n_sim: mc.n_sim,
        moment_paths: mc.paths.clone(),
        data_moments: mc.data.clone(),
        model_moments: sim.mean.clone(),
        model_stderr: sim.stderr.clone(),
        objective_trace: trace,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEstimate {
    pub estimate: f64,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: Vec<(f64, f64)>,
    pub dropped: usize,
}

/// λ̂² = −slope of log₂Ê|X★ψ_j|² − 2 log₂Ê|X★ψ_j| against j.
pub fn wavelet_moment_regression(
    ts: &TimeSeries,
    bank: &FilterBank,
    j_lo: i32,
    j_hi: i32,
) -> Result<RegressionEstimate, EstimationError> {
    let count = (j_hi - j_lo + 1).max(0) as usize;
    if count < 3 {
        return Err(EstimationError::TooFewPoints { needed: 3, got: count });
    }
    let w = transform_scales(ts, bank, j_lo, j_hi)?;
    let points: Vec<(f64, f64)> = (j_lo..=j_hi)
        .map(|j| {
            let c = w.interior(j);
            let m1 = mean(&c.iter().map(|z| z.norm()).collect::<Vec<_>>());
            let m2 = mean(&c.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>());
            (f64::from(j), m2.log2() - 2.0 * m1.log2())
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let (slope, intercept, stderr) = ols(&x, &y);
    Ok(RegressionEstimate {
        estimate: -slope,
        slope,
        intercept,
        stderr,
        points,
        dropped: 0,
    })
}

/// Log-spaced integer lags in [lo, hi], four per octave.
pub fn log_spaced_lags(lo: usize, hi: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut k = 0;
    loop {
        let l = (lo as f64 * 2f64.powf(k as f64 / 4.0)).round() as usize;
        if l > hi {
            break;
        }
        if out.last() != Some(&l) {
            out.push(l);
        }
        k += 1;
    }
    out
}

/// λ̂² = slope of Cov(ln|X★ψ_j(t)|, ln|X★ψ_j(t+l)|) against −ln l.
pub fn log_covariance_regression(
    ts: &TimeSeries,
    bank: &FilterBank,
    j: i32,
    lags: &[usize],
) -> Result<RegressionEstimate, EstimationError> {
    if lags.len() < 3 {
        return Err(EstimationError::TooFewPoints {
            needed: 3,
            got: lags.len(),
        });
    }
    let w = transform_scales(ts, bank, j, j)?;
    let margin = w.margins[&j];
    let coeffs = &w.by_scale[&j];
    let mut dropped = 0;
    let mut sums = vec![0.0; lags.len()];
    let mut counts = vec![0usize; lags.len()];
    for block in coeffs.chunks(ts.block_len()) {
        let inner = &block[margin..block.len() - margin];
        // Zero moduli are dropped; their neighbours keep their positions.
        let logs: Vec<Option<f64>> = inner
            .iter()
            .map(|z| {
                let a = z.norm();
                if a > 0.0 {
                    Some(a.ln())
                } else {
                    dropped += 1;
                    None
                }
            })
            .collect();
        let valid: Vec<f64> = logs.iter().flatten().copied().collect();
        if valid.is_empty() {
            continue;
        }
        let mu = mean(&valid);
        let centered: Vec<Option<f64>> = logs.iter().map(|v| v.map(|x| x - mu)).collect();
        for (i, &l) in lags.iter().enumerate() {
            for t in 0..centered.len().saturating_sub(l) {
                if let (Some(a), Some(b)) = (centered[t], centered[t + l]) {
                    sums[i] += a * b;
                    counts[i] += 1;
                }
            }
        }
    }
    let points: Vec<(f64, f64)> = lags
        .iter()
        .zip(sums.iter().zip(&counts))
        .filter(|(_, (_, &c))| c > 0)
        .map(|(&l, (&s, &c))| (-(l as f64).ln(), s / c as f64))
        .collect();
    if points.len() < 3 {
        return Err(EstimationError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let (slope, intercept, stderr) = ols(&x, &y);
    Ok(RegressionEstimate {
        estimate: slope,
        slope,
        intercept,
        stderr,
        points,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRegression {
    pub alpha: f64,
    /// Common exponent r = 1/α shared by both relations.
    pub r: f64,
    pub order1_slope: f64,
    pub order2_slope: f64,
    pub n_order1: usize,
    pub n_order2: usize,
}

/// Joint least squares of log₂S̃(j₁) ≈ c₁ + r j₁ and
/// log₂S̃(j₁, j₁+l) ≈ c₂ + (r − 1) l over l ≥ δ; α̂ = 1/r.
pub fn scattering_slope_regression(ns: &NormalizedScattering, delta: i32) -> Result<SlopeRegression, EstimationError> {
    let o1: Vec<(f64, f64)> = ns.order1_norm.iter().map(|(&j, &v)| (f64::from(j), v.log2())).collect();
    let o2: Vec<(f64, f64)> = ns
        .order2_norm
        .iter()
        .filter(|(&(a, b), _)| b - a >= delta)
        .map(|(&(a, b), &v)| (f64::from(b - a), v.log2()))
        .collect();
    if o1.len() < 2 {
        return Err(EstimationError::TooFewPoints {
            needed: 2,
            got: o1.len(),
        });
    }
    let distinct = {
        let mut l: Vec<i64> = o2.iter().map(|p| p.0 as i64).collect();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Err(EstimationError::TooFewPoints {
            needed: 2,
            got: distinct,
        });
    }
    if o1.iter().chain(&o2).any(|p| !p.1.is_finite()) {
        return Err(EstimationError::Nonpositive(0));
    }
    // Unknowns (r, c1, c2); order-2 rows move the known −l to the left side.
    let rows = o1.len() + o2.len();
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    let mut y = DVector::<f64>::zeros(rows);
    for (i, &(j, v)) in o1.iter().enumerate() {
        a[(i, 0)] = j;
        a[(i, 1)] = 1.0;
        y[i] = v;
    }
    for (k, &(l, v)) in o2.iter().enumerate() {
        let i = o1.len() + k;
        a[(i, 0)] = l;
        a[(i, 2)] = 1.0;
        y[i] = v + l;
    }
    let sol = (a.transpose() * &a)
        .lu()
        .solve(&(a.transpose() * y))
        .ok_or(EstimationError::Singular)?;
    let r = sol[0];
    let (x1, y1): (Vec<f64>, Vec<f64>) = o1.iter().copied().unzip();
    let (x2, y2): (Vec<f64>, Vec<f64>) = o2.iter().copied().unzip();
    Ok(SlopeRegression {
        alpha: 1.0 / r,
        r,
        order1_slope: ols(&x1, &y1).0,
        order2_slope: ols(&x2, &y2).0,
        n_order1: o1.len(),
        n_order2: o2.len(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    #[test]
    fn chi2_closed_forms() {
        assert_eq!(chi2_survival(0.0, 5), 1.0);
        assert!((chi2_survival(2.0 * 2f64.ln(), 2) - 0.5).abs() < 1e-14);
        for x in [0.5, 3.0, 10.0] {
            assert!((chi2_survival(x, 2) - (-x / 2.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn chi2_matches_quadrature() {
        // Upper tail of the chi-squared(27) density by Simpson's rule on [27, 400].
        let k = 27.0f64;
        let lg = statrs::function::gamma::ln_gamma(k / 2.0);
        let pdf = |x: f64| ((k / 2.0 - 1.0) * x.ln() - x / 2.0 - k / 2.0 * 2f64.ln() - lg).exp();
        let (a, b, n) = (27.0, 400.0, 200_000);
        let h = (b - a) / n as f64;
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let q = s * h / 3.0;
        assert!(
            (chi2_survival(27.0, 27) - q).abs() < 1e-8,
            "{} vs {q}",
            chi2_survival(27.0, 27)
        );
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let r = minimize(|t| (t - 0.37).powi(2), &SearchOptions::new(0.0, 1.0)).unwrap();
        assert!((r.theta - 0.37).abs() < 1e-4);
        assert!(matches!(
            minimize(|t| t, &SearchOptions::new(1.0, 1.0)),
            Err(EstimationError::EmptyBounds { .. })
        ));
        assert!(matches!(
            minimize(|_| f64::NAN, &SearchOptions::new(0.0, 1.0)),
            Err(EstimationError::NoFiniteObjective)
        ));
    }

    #[test]
    fn multi_start_reports_disagreement() {
        let f = |t: f64| ((t - 0.2) * (t - 0.8)).powi(2) + 0.01 * t;
        let r = minimize(f, &SearchOptions::new(0.0, 1.0)).unwrap();
        assert!((r.theta - 0.2).abs() < 0.03);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn weight_recovers_diagonal_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d: [f64; 3] = [1.0, 4.0, 0.25];
        let blocks: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                d.iter()
                    .map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let w = weight_from_blocks(&blocks, &[0.0; 3]).unwrap();
        for (i, di) in d.iter().enumerate() {
            assert!((w.matrix[(i, i)] * di - 1.0).abs() < 0.2, "{}", w.matrix[(i, i)]);
            for j in 0..3 {
                assert!((w.matrix[(i, j)] - w.matrix[(j, i)]).abs() < 1e-10);
            }
        }
        assert!(matches!(
            weight_from_blocks(&blocks[..1], &[0.0; 3]),
            Err(EstimationError::TooFewBlocks(1))
        ));
    }

    #[test]
    fn rank_deficient_covariance_is_ridged() {
        let blocks: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(i), f64::from(i)]).collect();
        let w = weight_from_blocks(&blocks, &[4.5, 4.5]).unwrap();
        assert!(w.regularized);
    }

    #[test]
    fn slope_regression_on_exact_power_laws() {
        let r = 1.0 / 1.5;
        let order1_norm: BTreeMap<i32, f64> = (1..=8).map(|j| (j, 2f64.powf(r * f64::from(j)))).collect();
        let mut order2_norm = BTreeMap::new();
        for a in 1..=8 {
            for b in a + 1..=8 {
                order2_norm.insert((a, b), 2f64.powf(0.3 + (r - 1.0) * f64::from(b - a)));
            }
        }
        let ns = NormalizedScattering {
            order1_norm,
            order2_norm,
            higher_norm: BTreeMap::new(),
            reference_scale: 1,
            omitted: vec![],
        };
        let s = scattering_slope_regression(&ns, 3).unwrap();
        assert!((s.alpha - 1.5).abs() < 1e-10);
        assert!(scattering_slope_regression(&ns, 7).is_err());
    }

    #[test]
    fn lags_are_log_spaced() {
        let l = log_spaced_lags(4, 64);
        assert_eq!(l.first(), Some(&4));
        assert_eq!(l.last(), Some(&64));
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }
}

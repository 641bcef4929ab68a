//! Diagnostics on scattering output: log₂ slope fits, self-similarity
//! stationarity across scales and an intermittency summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::ols;
use crate::scattering::NormalizedScattering;

pub const DEFAULT_SPREAD_THRESHOLD: f64 = 0.3;
/// Smallest scale gap l pooled into the second-order tail.
pub const TAIL_START: i32 = 3;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 3 points in range, got {0}")]
    TooFewPoints(usize),
    #[error("nonpositive value {value} at index {index}")]
    Nonpositive { index: i32, value: f64 },
    #[error("no lag in range has at least two j1 values")]
    EmptyIntersection,
    #[error("no second-order entries with l >= {0}")]
    NoTail(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub range: (i32, i32),
}

/// OLS of log₂ v(j) on j over the inclusive range.
pub fn fit_log2_slope(curve: &BTreeMap<i32, f64>, range: (i32, i32)) -> Result<SlopeFit, AnalysisError> {
    let pts: Vec<(i32, f64)> = curve.range(range.0..=range.1).map(|(&j, &v)| (j, v)).collect();
    if pts.len() < 3 {
        return Err(AnalysisError::TooFewPoints(pts.len()));
    }
    if let Some(&(index, value)) = pts.iter().find(|p| !(p.1 > 0.0)) {
        return Err(AnalysisError::Nonpositive { index, value });
    }
    let x: Vec<f64> = pts.iter().map(|p| f64::from(p.0)).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.log2()).collect();
    let (slope, intercept, stderr) = ols(&x, &y);
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        range,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSpread {
    pub l: i32,
    pub spread: f64,
    pub n_j1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub threshold: f64,
    pub lags: Vec<LagSpread>,
    pub max_spread: f64,
    pub pass: bool,
}

/// For each l in range, spread of log₂ S̃(j₁, j₁+l) over j₁.
pub fn stationarity_across_scales(
    ns: &NormalizedScattering,
    l_range: (i32, i32),
    threshold: f64,
) -> Result<StationarityReport, AnalysisError> {
    let curves = ns.curves_by_lag();
    let lags: Vec<LagSpread> = curves
        .range(l_range.0..=l_range.1)
        .filter(|(_, c)| c.len() >= 2)
        .map(|(&l, c)| {
            let (lo, hi) = c
                .values()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            LagSpread {
                l,
                spread: hi - lo,
                n_j1: c.len(),
            }
        })
        .collect();
    if lags.is_empty() {
        return Err(AnalysisError::EmptyIntersection);
    }
    let max_spread = lags.iter().map(|l| l.spread).fold(0.0, f64::max);
    Ok(StationarityReport {
        threshold,
        lags,
        max_spread,
        pass: max_spread < threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntermittencyClass {
    GaussianLike,
    Intermediate,
    HighlyIntermittent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermittencySummary {
    /// Pooled slope of log₂ S̃(j₁, j₁+l) against l for l ≥ 3.
    pub tail_slope: f64,
    /// Mean of log₂ S̃(j₁, j₁+l) over the tail.
    pub tail_level: f64,
    /// Σ_{j₂} S̃(j, j₂)² per j.
    pub energy_by_j1: BTreeMap<i32, f64>,
    pub class: IntermittencyClass,
}

pub fn classify(slope: f64) -> IntermittencyClass {
    if slope < -0.4 {
        IntermittencyClass::GaussianLike
    } else if slope > -0.1 {
        IntermittencyClass::HighlyIntermittent
    } else {
        IntermittencyClass::Intermediate
    }
}

/// Slope of log₂ S̃(j₁, j₁+l) against l, pooled over j₁ with a separate
/// intercept per j₁, for l ≥ `tail_start`.
pub fn pooled_tail_slope(ns: &NormalizedScattering, tail_start: i32) -> Result<(f64, f64), AnalysisError> {
    let mut by_j1: BTreeMap<i32, Vec<(f64, f64)>> = BTreeMap::new();
    for (&(a, b), &v) in &ns.order2_norm {
        if b - a >= tail_start && v > 0.0 {
            by_j1.entry(a).or_default().push((f64::from(b - a), v.log2()));
        }
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut all = Vec::new();
    for pts in by_j1.values() {
        if pts.len() < 2 {
            continue;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        for p in pts {
            sxx += (p.0 - mx) * (p.0 - mx);
            sxy += (p.0 - mx) * (p.1 - my);
            all.push(p.1);
        }
    }
    if all.is_empty() || sxx == 0.0 {
        return Err(AnalysisError::NoTail(tail_start));
    }
    let level = all.iter().sum::<f64>() / all.len() as f64;
    Ok((sxy / sxx, level))
}

pub fn intermittency_summary(ns: &NormalizedScattering) -> Result<IntermittencySummary, AnalysisError> {
    let (tail_slope, tail_level) = pooled_tail_slope(ns, TAIL_START)?;
    let mut energy_by_j1: BTreeMap<i32, f64> = BTreeMap::new();
    for (&(a, _), &v) in &ns.order2_norm {
        *energy_by_j1.entry(a).or_default() += v * v;
    }
    Ok(IntermittencySummary {
        tail_slope,
        tail_level,
        energy_by_j1,
        class: classify(tail_slope),
    })
}

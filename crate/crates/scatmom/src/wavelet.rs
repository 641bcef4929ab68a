//! Complex dyadic wavelet filter bank, low-pass window, certificates and
//! FFT-based transforms.
//!
//! The mother wavelet is analytic by construction: on ω > 0,
//! |Ψ(ω)|² = 2 h(log₂(ω/ω_c)) with h a partition of unity of Gaussians in
//! log-frequency, so the dyadic family sums to 2 exactly before truncation.
//! Each scale is sampled, truncated to |t| ≤ 6·2^j and projected so that its
//! first four moments vanish.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::next_pow2;
use crate::signal::TimeSeries;

/// Centre frequency of the mother wavelet.
pub const CENTRE: f64 = 0.75 * PI;
/// Standard deviation, in octaves, of the log-frequency bumps.
const LOG_WIDTH: f64 = 0.5;
/// Filter half-support in units of 2^j.
pub const SUPPORT: f64 = 6.0;
/// Fraction of the support left untapered.
const FLAT: f64 = 0.75;
/// Half-width of the averaging window in units of 2^M.
pub const PHI_SUPPORT: f64 = 4.0;
const MOMENT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("unknown wavelet family {0:?}")]
    UnknownFamily(String),
    #[error("scale range j_min={j_min} > M={m}")]
    EmptyRange { j_min: i32, m: i32 },
    #[error("scales must be at least 1, got j_min={0}")]
    NonPositiveScale(i32),
    #[error("n_fft={n_fft} must be a power of two of at least {needed} for scales up to {m}")]
    FftTooShort { n_fft: usize, needed: usize, m: i32 },
    #[error("block of {block_len} samples is shorter than the support of scale {j} ({support} samples)")]
    BlockTooShort { block_len: usize, j: i32, support: usize },
    #[error("scale {0} is not in the filter bank")]
    MissingScale(i32),
    #[error("fractional order {0} outside [-2, 2]")]
    BadOrder(f64),
    #[error("filter bank JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("filter bank JSON is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveletFamily {
    LogGaussian,
}

impl FromStr for WaveletFamily {
    type Err = WaveletError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log-gaussian" | "default" => Ok(Self::LogGaussian),
            other => Err(WaveletError::UnknownFamily(other.to_string())),
        }
    }
}

impl std::fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("log-gaussian")
    }
}

fn bump(v: f64) -> f64 {
    (-v * v / (2.0 * LOG_WIDTH * LOG_WIDTH)).exp()
}

/// Partition of unity h(u) = g(u) / Σ_k g(u−k).
fn partition(u: f64) -> f64 {
    if u.abs() > 12.0 {
        return 0.0;
    }
    let base = u.floor();
    let mut den = 0.0;
    for k in -9..=9 {
        den += bump(u - base - f64::from(k));
    }
    bump(u) / den
}

/// |Ψ(ω)|² of the untapered mother wavelet.
fn mother_sq(w: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    2.0 * partition((w / CENTRE).log2())
}

fn smooth_step(u: f64) -> f64 {
    let s = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let a = s(u);
    let b = s(1.0 - u);
    a / (a + b)
}

/// C^∞ taper from 1 at |ω| = π/2 to 0 at |ω| = π.
fn nyquist_taper(w: f64) -> f64 {
    let u = ((w.abs() - PI / 2.0) / (PI / 2.0)).clamp(0.0, 1.0);
    (PI / 2.0 * smooth_step(u)).cos()
}

/// Frequency response of the untruncated scale-j filter at ω ∈ [−π, π].
fn ideal_response(j: i32, w: f64) -> f64 {
    let x = w * 2f64.powi(j);
    if x <= 0.0 {
        return 0.0;
    }
    let u = (x / CENTRE).log2();
    if u.abs() > 8.0 {
        return 0.0;
    }
    (2.0 * partition(u)).sqrt() * nyquist_taper(w)
}

/// Σ_{k≥1} h(v+k): the share of the Littlewood–Paley sum carried by scales
/// coarser than the reference.
fn lp_tail(v: f64) -> f64 {
    if v == f64::NEG_INFINITY {
        return 1.0;
    }
    let kmax = ((-v).max(0.0).ceil() as i64) + 14;
    (1..=kmax).map(|k| partition(v + k as f64)).sum()
}

/// |Φ_M(ω)|².
fn phi_sq(m: i32, w: f64) -> f64 {
    let x = w.abs() * 2f64.powi(m);
    if x == 0.0 {
        return 1.0;
    }
    lp_tail((x / CENTRE).log2()) * (-x * x / 2.0).exp()
}

/// ½ Σ_{j>M} (|Ψ_j(ω)|² + |Ψ_j(−ω)|²) for the ideal dyadic family.
fn phi_bound(m: i32, w: f64) -> f64 {
    let a = w.abs();
    if a == 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut j = m + 1;
    while a * 2f64.powi(j) < CENTRE * 2f64.powi(10) {
        sum += mother_sq(a * 2f64.powi(j)) * nyquist_taper(a).powi(2);
        j += 1;
    }
    0.5 * sum
}

/// Angular frequency of FFT bin k on a grid of n points, in (−π, π].
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        2.0 * PI * k as f64 / n as f64
    } else {
        -2.0 * PI * (n - k) as f64 / n as f64
    }
}

/// Compactly supported complex filter ψ_j sampled at t = −h..=h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub j: i32,
    pub half_width: usize,
    #[serde(with = "interleaved")]
    pub taps: Vec<Complex64>,
}

impl Filter {
    pub fn tap(&self, t: i64) -> Complex64 {
        let i = t + self.half_width as i64;
        if i < 0 || i as usize >= self.taps.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.taps[i as usize]
        }
    }

    pub fn support(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn l1_norm(&self) -> f64 {
        self.taps.iter().map(|c| c.norm()).sum()
    }

    /// ‖ψ̄_j‖₁ for the discrete primitive ψ̄_j(t) = Σ_{s≤t} ψ_j(s).
    pub fn primitive_l1(&self) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut total = 0.0;
        for c in &self.taps {
            acc += c;
            total += acc.norm();
        }
        total
    }

    /// max_k |Σ_t u^k ψ_j(t)| / ‖ψ_j‖₁ for k = 0..=3, with u = t/2^j.
    pub fn moment_residual(&self) -> f64 {
        let scale = 2f64.powi(self.j);
        let norm = self.l1_norm();
        (0..4)
            .map(|k| {
                let s: Complex64 = self
                    .taps
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * ((i as f64 - self.half_width as f64) / scale).powi(k))
                    .sum();
                s.norm() / norm
            })
            .fold(0.0, f64::max)
    }

    /// DFT of the taps on an n-point periodic grid.
    pub fn response(&self, n: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, c) in self.taps.iter().enumerate() {
            let t = i as i64 - self.half_width as i64;
            buf[t.rem_euclid(n as i64) as usize] += c;
        }
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf
    }
}

fn design_filter(j: i32) -> Filter {
    let scale = 2f64.powi(j);
    let hw = (SUPPORT * scale).ceil() as usize;
    let grid = next_pow2(4 * hw + 4).max(1024);
    let mut spec: Vec<Complex64> = (0..grid)
        .map(|k| Complex64::new(ideal_response(j, bin_frequency(k, grid)), 0.0))
        .collect();
    FftPlanner::new().plan_fft_inverse(grid).process(&mut spec);
    let norm = 1.0 / grid as f64;

    let n = 2 * hw + 1;
    let mut taps = Vec::with_capacity(n);
    let mut win = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as i64 - hw as i64;
        let x = t.unsigned_abs() as f64 / (hw as f64 + 1.0);
        let w = if x < FLAT {
            1.0
        } else {
            (PI / 2.0 * (x - FLAT) / (1.0 - FLAT)).cos().powi(2)
        };
        taps.push(spec[t.rem_euclid(grid as i64) as usize] * norm * w);
        win.push(w);
        u.push(t as f64 / scale);
    }

    // Remove win·(c0 + c1 u + c2 u² + c3 u³) so that moments 0..3 vanish.
    let mut v = Matrix4::<f64>::zeros();
    let mut b_re = Vector4::<f64>::zeros();
    let mut b_im = Vector4::<f64>::zeros();
    for i in 0..n {
        let mut pk = 1.0;
        for k in 0..4 {
            let mut pm = 1.0;
            for m in 0..4 {
                v[(k, m)] += win[i] * pk * pm;
                pm *= u[i];
            }
            b_re[k] += taps[i].re * pk;
            b_im[k] += taps[i].im * pk;
            pk *= u[i];
        }
    }
    let lu = v.lu();
    let c_re = lu.solve(&b_re).expect("moment system is nonsingular");
    let c_im = lu.solve(&b_im).expect("moment system is nonsingular");
    for i in 0..n {
        let mut pm = 1.0;
        let mut corr = Complex64::new(0.0, 0.0);
        for m in 0..4 {
            corr += Complex64::new(c_re[m], c_im[m]) * pm;
            pm *= u[i];
        }
        taps[i] -= corr * win[i];
    }
    Filter {
        j,
        half_width: hw,
        taps,
    }
}

/// Deviation of the Littlewood–Paley sum from 2 on one half-octave band
/// centred on scale `scale`'s centre frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpBand {
    pub scale: i32,
    pub lo: f64,
    pub hi: f64,
    pub max_deviation: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub max_deviation: f64,
    pub bands: Vec<LpBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiReport {
    pub holds: bool,
    pub margin: f64,
    pub checked_bins: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub lp_defect: f64,
    pub phi_holds: bool,
    pub phi_margin: f64,
    pub vanishing_moments: usize,
    pub max_moment_residual: f64,
    pub analyticity_ratio: f64,
}

impl Certificates {
    pub fn all_pass(&self) -> bool {
        self.lp_defect < 0.05
            && self.phi_holds
            && self.phi_margin > 0.0
            && self.vanishing_moments >= 4
            && self.analyticity_ratio < 0.05
    }
}

/// Dyadic bank ψ_j for j in [j_min, M] and the averaging window φ_M.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    family: WaveletFamily,
    n_fft: usize,
    j_min: i32,
    m: i32,
    filters: Vec<Filter>,
    lp: LpReport,
    analyticity_ratio: f64,
}

/// Smallest admissible certificate grid for scales up to `m`.
pub fn min_fft_len(m: i32) -> usize {
    next_pow2(2 * (SUPPORT * 2f64.powi(m)).ceil() as usize + 1)
}

pub fn build_filter_bank(n_fft: usize, j_min: i32, m: i32, family: WaveletFamily) -> Result<FilterBank, WaveletError> {
    if j_min > m {
        return Err(WaveletError::EmptyRange { j_min, m });
    }
    if j_min < 1 {
        return Err(WaveletError::NonPositiveScale(j_min));
    }
    let needed = min_fft_len(m);
    if !n_fft.is_power_of_two() || n_fft < needed {
        return Err(WaveletError::FftTooShort { n_fft, needed, m });
    }
    let filters: Vec<Filter> = (j_min..=m).into_par_iter().map(design_filter).collect();
    FilterBank::from_filters(family, n_fft, j_min, m, filters)
}

impl FilterBank {
    fn from_filters(
        family: WaveletFamily,
        n_fft: usize,
        j_min: i32,
        m: i32,
        filters: Vec<Filter>,
    ) -> Result<Self, WaveletError> {
        let responses: Vec<Vec<f64>> = filters
            .par_iter()
            .map(|f| f.response(n_fft).iter().map(|c| c.norm_sqr()).collect())
            .collect();
        let mut lp_sum = vec![0.0; n_fft];
        for r in &responses {
            for (acc, v) in lp_sum.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let analyticity_ratio = responses
            .iter()
            .map(|r| {
                let neg: f64 = r[n_fft / 2 + 1..].iter().sum();
                let total: f64 = r.iter().sum();
                neg / total
            })
            .fold(0.0, f64::max);
        let lp = lp_report(&lp_sum, j_min, m);
        Ok(Self {
            family,
            n_fft,
            j_min,
            m,
            filters,
            lp,
            analyticity_ratio,
        })
    }

    pub fn default_for(j_min: i32, m: i32) -> Result<Self, WaveletError> {
        build_filter_bank(min_fft_len(m).max(1 << 10), j_min, m, WaveletFamily::LogGaussian)
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    /// Coarsest wavelet scale, also the averaging scale M.
    pub fn m(&self) -> i32 {
        self.m
    }

    pub fn j_range(&self) -> (i32, i32) {
        (self.j_min, self.m)
    }

    pub fn lp_defect(&self) -> f64 {
        self.lp.max_deviation
    }

    pub fn analyticity_ratio(&self) -> f64 {
        self.analyticity_ratio
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn filter(&self, j: i32) -> Result<&Filter, WaveletError> {
        if j < self.j_min || j > self.m {
            return Err(WaveletError::MissingScale(j));
        }
        Ok(&self.filters[(j - self.j_min) as usize])
    }

    pub fn half_width(&self, j: i32) -> Result<usize, WaveletError> {
        Ok(self.filter(j)?.half_width)
    }

    /// Ψ(2^j ω) on the n_fft grid.
    pub fn psi_hat(&self, j: i32) -> Result<Vec<Complex64>, WaveletError> {
        Ok(self.filter(j)?.response(self.n_fft))
    }

    /// Φ(2^M ω) on the n_fft grid.
    pub fn phi_hat(&self) -> Vec<Complex64> {
        phi_response(self.m, self.n_fft)
    }

    pub fn phi_half_width(&self) -> usize {
        (PHI_SUPPORT * 2f64.powi(self.m)).ceil() as usize
    }

    pub fn verify_littlewood_paley(&self) -> LpReport {
        self.lp.clone()
    }

    pub fn verify_phi(&self) -> PhiReport {
        let phi: Vec<f64> = self.phi_hat().iter().map(|c| c.norm_sqr()).collect();
        phi_domination(self, &phi)
    }

    pub fn certificates(&self) -> Certificates {
        let phi = self.verify_phi();
        let max_moment_residual = self.filters.iter().map(Filter::moment_residual).fold(0.0, f64::max);
        Certificates {
            lp_defect: self.lp_defect(),
            phi_holds: phi.holds,
            phi_margin: phi.margin,
            vanishing_moments: if max_moment_residual < MOMENT_TOL { 4 } else { 0 },
            max_moment_residual,
            analyticity_ratio: self.analyticity_ratio,
        }
    }

    pub fn to_json(&self) -> Result<String, WaveletError> {
        let dump = BankDump {
            family: self.family,
            n_fft: self.n_fft,
            j_min: self.j_min,
            m: self.m,
            lp_defect: self.lp_defect(),
            analyticity_ratio: self.analyticity_ratio,
            filters: self.filters.clone(),
            psi_hat: self
                .filters
                .iter()
                .map(|f| ResponseDump {
                    j: f.j,
                    response: f.response(self.n_fft),
                })
                .collect(),
            phi_hat: self.phi_hat(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    /// Rebuilds a bank from its JSON dump; stored certificates must match a
    /// recomputation exactly.
    pub fn from_json(s: &str) -> Result<Self, WaveletError> {
        let dump: BankDump = serde_json::from_str(s)?;
        let bank = Self::from_filters(dump.family, dump.n_fft, dump.j_min, dump.m, dump.filters)?;
        if bank.filters.len() != (dump.m - dump.j_min + 1) as usize
            || bank.filters.iter().zip(dump.j_min..).any(|(f, j)| f.j != j)
        {
            return Err(WaveletError::Inconsistent("scale list".into()));
        }
        if bank.lp_defect().to_bits() != dump.lp_defect.to_bits()
            || bank.analyticity_ratio.to_bits() != dump.analyticity_ratio.to_bits()
        {
            return Err(WaveletError::Inconsistent("certificates".into()));
        }
        Ok(bank)
    }
}

#[derive(Serialize, Deserialize)]
struct ResponseDump {
    j: i32,
    #[serde(with = "interleaved")]
    response: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct BankDump {
    family: WaveletFamily,
    n_fft: usize,
    j_min: i32,
    m: i32,
    lp_defect: f64,
    analyticity_ratio: f64,
    filters: Vec<Filter>,
    psi_hat: Vec<ResponseDump>,
    #[serde(with = "interleaved")]
    phi_hat: Vec<Complex64>,
}

fn lp_report(lp_sum: &[f64], j_min: i32, m: i32) -> LpReport {
    let n = lp_sum.len();
    let lowest = (n as f64).log2() as i32 - 2;
    let mut bands: Vec<LpBand> = (0..=lowest)
        .map(|s| LpBand {
            scale: s,
            lo: CENTRE * 2f64.powf(-f64::from(s) - 0.5),
            hi: (CENTRE * 2f64.powf(-f64::from(s) + 0.5)).min(PI),
            max_deviation: 0.0,
            covered: s > j_min && s < m,
        })
        .collect();
    for k in 1..=n / 2 {
        let w = bin_frequency(k, n);
        let neg = if k == n / 2 { 0.0 } else { lp_sum[n - k] };
        let dev = (lp_sum[k] + neg - 2.0).abs();
        if let Some(b) = bands
            .iter_mut()
            .find(|b| w >= b.lo && (w < b.hi || (b.hi == PI && w <= PI)))
        {
            b.max_deviation = b.max_deviation.max(dev);
        }
    }
    let covered = bands.iter().filter(|b| b.covered);
    let max_deviation = if bands.iter().any(|b| b.covered) {
        covered.map(|b| b.max_deviation).fold(0.0, f64::max)
    } else {
        bands.iter().map(|b| b.max_deviation).fold(0.0, f64::max)
    };
    LpReport { max_deviation, bands }
}

/// Checks |Φ(ω)|² ≤ ½ Σ_{j>M}(|Ψ(2^jω)|² + |Ψ(−2^jω)|²) for a candidate
/// window given as |Φ|² on the bank's n_fft grid. The inequality must hold on
/// every nonzero bin; the margin is taken over 0 < |ω| ≤ ω_c 2^−M.
pub fn phi_domination(bank: &FilterBank, phi_sq_on_grid: &[f64]) -> PhiReport {
    let n = phi_sq_on_grid.len();
    let limit = CENTRE * 2f64.powi(-bank.m);
    let mut margin = f64::INFINITY;
    let mut checked_bins = 0;
    let mut violations = 0;
    for (k, lhs) in phi_sq_on_grid.iter().enumerate().skip(1) {
        let w = bin_frequency(k, n);
        let rhs = phi_bound(bank.m, w);
        if *lhs > rhs {
            violations += 1;
        }
        if w.abs() <= limit {
            checked_bins += 1;
            margin = margin.min(rhs - lhs);
        }
    }
    PhiReport {
        holds: violations == 0 && margin > 0.0,
        margin,
        checked_bins,
        violations,
    }
}

/// Φ(2^M ω) on an n-point grid (real and even, Φ(0) = 1).
pub fn phi_response(m: i32, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::new(phi_sq(m, bin_frequency(k, n)).sqrt(), 0.0))
        .collect()
}

/// Periodic convolution engine for one block length: FFT plans plus cached
/// filter responses.
pub struct Convolver {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    responses: HashMap<i32, Vec<Complex64>>,
    margins: HashMap<i32, usize>,
    phi: Option<Vec<Complex64>>,
}

impl Convolver {
    /// Prepares responses for `scales`; fails if a filter does not leave any
    /// valid sample in a block of `len`.
    pub fn new(bank: &FilterBank, len: usize, scales: &[i32], with_phi: bool) -> Result<Self, WaveletError> {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut responses = HashMap::new();
        let mut margins = HashMap::new();
        for &j in scales {
            let f = bank.filter(j)?;
            if f.support() > len {
                return Err(WaveletError::BlockTooShort {
                    block_len: len,
                    j,
                    support: f.support(),
                });
            }
            let scale = 1.0 / len as f64;
            let r: Vec<Complex64> = f.response(len).into_iter().map(|c| c * scale).collect();
            responses.insert(j, r);
            margins.insert(j, f.half_width);
        }
        let phi = with_phi.then(|| {
            let scale = 1.0 / len as f64;
            phi_response(bank.m, len).into_iter().map(|c| c * scale).collect()
        });
        Ok(Self {
            len,
            forward,
            inverse,
            responses,
            margins,
            phi,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn margin(&self, j: i32) -> usize {
        self.margins[&j]
    }

    pub fn spectrum_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn spectrum(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut buf = x.to_vec();
        self.forward.process(&mut buf);
        buf
    }

    /// X★ψ_j given the spectrum of X.
    pub fn filter(&self, spectrum: &[Complex64], j: i32) -> Vec<Complex64> {
        let r = &self.responses[&j];
        let mut buf: Vec<Complex64> = spectrum.iter().zip(r).map(|(a, b)| a * b).collect();
        self.inverse.process(&mut buf);
        buf
    }

    /// |X★ψ_j| given the spectrum of X.
    pub fn modulus(&self, spectrum: &[Complex64], j: i32) -> Vec<f64> {
        self.filter(spectrum, j).iter().map(|c| c.norm()).collect()
    }

    /// U★φ_M for a real signal U.
    pub fn smooth(&self, u: &[f64]) -> Vec<f64> {
        let phi = self.phi.as_ref().expect("convolver built without window");
        let mut buf = self.spectrum_real(u);
        for (a, b) in buf.iter_mut().zip(phi) {
            *a *= b;
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

/// Wavelet coefficients per scale, concatenated over blocks like the input.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub by_scale: BTreeMap<i32, Vec<Complex64>>,
    /// Samples excluded at each block edge, per scale.
    pub margins: BTreeMap<i32, usize>,
    pub source_len: usize,
    pub block_len: usize,
    pub n_blocks: usize,
    pub j_range: (i32, i32),
}

impl WaveletCoeffs {
    /// Whether sample `t` of scale j lies within the edge margin of its block.
    pub fn is_edge(&self, j: i32, t: usize) -> bool {
        let m = self.margins[&j];
        let p = t % self.block_len;
        p < m || p + m >= self.block_len
    }

    /// Coefficients of scale j away from block edges.
    pub fn interior(&self, j: i32) -> Vec<Complex64> {
        let m = self.margins[&j];
        self.by_scale[&j]
            .chunks(self.block_len)
            .flat_map(|b| b[m..self.block_len - m].iter().copied())
            .collect()
    }
}

/// Transform over every scale of the bank.
pub fn transform(ts: &TimeSeries, bank: &FilterBank) -> Result<WaveletCoeffs, WaveletError> {
    transform_scales(ts, bank, bank.j_min, bank.m)
}

pub fn transform_scales(
    ts: &TimeSeries,
    bank: &FilterBank,
    j_lo: i32,
    j_hi: i32,
) -> Result<WaveletCoeffs, WaveletError> {
    if j_lo > j_hi {
        return Err(WaveletError::EmptyRange { j_min: j_lo, m: j_hi });
    }
    let scales: Vec<i32> = (j_lo..=j_hi).collect();
    let conv = Convolver::new(bank, ts.block_len(), &scales, false)?;
    let per_block: Vec<Vec<Vec<Complex64>>> = ts
        .blocks()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|b| {
            let spec = conv.spectrum_real(b);
            scales.iter().map(|&j| conv.filter(&spec, j)).collect()
        })
        .collect();
    let mut by_scale = BTreeMap::new();
    let mut margins = BTreeMap::new();
    for (i, &j) in scales.iter().enumerate() {
        let mut all = Vec::with_capacity(ts.len());
        for b in &per_block {
            all.extend_from_slice(&b[i]);
        }
        by_scale.insert(j, all);
        margins.insert(j, conv.margin(j));
    }
    Ok(WaveletCoeffs {
        by_scale,
        margins,
        source_len: ts.len(),
        block_len: ts.block_len(),
        n_blocks: ts.n_blocks(),
        j_range: (j_lo, j_hi),
    })
}

/// Fourier multiplier (iω)^α applied per block. α = 0 is the identity;
/// otherwise the zero-frequency and Nyquist bins are set to 0.
pub fn fractional_derivative(ts: &TimeSeries, alpha: f64) -> Result<TimeSeries, WaveletError> {
    if !(alpha.abs() <= 2.0) {
        return Err(WaveletError::BadOrder(alpha));
    }
    if alpha == 0.0 {
        return Ok(ts.clone());
    }
    let n = ts.block_len();
    let mult = fractional_multiplier(n, alpha);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    Ok(ts.map_blocks(|b| {
        let mut buf: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        for (a, m) in buf.iter_mut().zip(&mult) {
            *a *= m;
        }
        inv.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    })?)
}

/// (iω)^α on an n-point grid, zero at DC and Nyquist.
pub fn fractional_multiplier(n: usize, alpha: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            if k == 0 || 2 * k == n {
                return Complex64::new(0.0, 0.0);
            }
            let w = bin_frequency(k, n);
            Complex64::from_polar(w.abs().powf(alpha), w.signum() * alpha * PI / 2.0)
        })
        .collect()
}

mod interleaved {
    use rustfft::num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = v.iter().flat_map(|c| [c.re, c.im]).collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() % 2 != 0 {
            return Err(serde::de::Error::custom("odd-length interleaved array"));
        }
        Ok(flat.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> FilterBank {
        build_filter_bank(1 << 14, 1, 10, WaveletFamily::LogGaussian).unwrap()
    }

    #[test]
    fn partition_sums_to_one() {
        for i in 0..200 {
            let u = -3.0 + 0.0337 * f64::from(i);
            let s: f64 = (-20..=20).map(|k| partition(u + f64::from(k))).sum();
            assert!((s - 1.0).abs() < 1e-14, "{u}: {s}");
        }
    }

    #[test]
    fn default_bank_certificates() {
        let b = bank();
        let c = b.certificates();
        assert!(c.lp_defect < 0.05, "{c:?}");
        assert!(c.analyticity_ratio < 0.05, "{c:?}");
        assert!(c.phi_holds && c.phi_margin > 0.0, "{c:?}");
        assert_eq!(c.vanishing_moments, 4, "{c:?}");
        assert_eq!(
            b.verify_littlewood_paley().max_deviation.to_bits(),
            b.lp_defect().to_bits()
        );
    }

    #[test]
    fn phi_is_one_at_zero_and_all_pass_fails() {
        let b = bank();
        assert_eq!(b.phi_hat()[0], Complex64::new(1.0, 0.0));
        let allpass = vec![1.0; b.n_fft()];
        let r = phi_domination(&b, &allpass);
        assert!(!r.holds && r.violations > 0);
        assert_eq!(b.verify_phi(), b.verify_phi());
    }

    #[test]
    fn single_scale_bank_reports_missing_octaves() {
        let b = build_filter_bank(1 << 10, 5, 5, WaveletFamily::LogGaussian).unwrap();
        let r = b.verify_littlewood_paley();
        assert!(r.max_deviation > 1.9, "{}", r.max_deviation);
        let far = r.bands.iter().find(|band| band.scale == 2).unwrap();
        assert!((far.max_deviation - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(matches!(
            build_filter_bank(1 << 14, 5, 4, WaveletFamily::LogGaussian),
            Err(WaveletError::EmptyRange { .. })
        ));
        assert!(matches!(
            build_filter_bank(1 << 12, 1, 10, WaveletFamily::LogGaussian),
            Err(WaveletError::FftTooShort { .. })
        ));
        assert!("mexican-hat".parse::<WaveletFamily>().is_err());
    }

    #[test]
    fn constant_input_gives_zero() {
        let b = bank();
        let ts = TimeSeries::new(vec![3.5; 4096], 1.0).unwrap();
        let w = transform_scales(&ts, &b, 1, 8).unwrap();
        for (j, c) in &w.by_scale {
            let m = w.margins[j];
            let max = c[m..c.len() - m].iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(max < 1e-10, "scale {j}: {max}");
        }
    }

    #[test]
    fn tone_gives_flat_modulus() {
        let b = bank();
        let n = 1 << 13;
        for j in [2, 4, 6] {
            let w0 = CENTRE * 2f64.powi(-j) * 1.1;
            let x: Vec<f64> = (0..n).map(|t| (w0 * t as f64).cos()).collect();
            let ts = TimeSeries::new(x, 1.0).unwrap();
            let c = transform_scales(&ts, &b, j, j).unwrap().interior(j);
            let expect = 0.5 * ideal_response(j, w0);
            for z in &c {
                assert!(
                    (z.norm() / expect - 1.0).abs() < 0.01,
                    "j={j}: {} vs {expect}",
                    z.norm()
                );
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let b = build_filter_bank(1 << 10, 1, 6, WaveletFamily::LogGaussian).unwrap();
        let s = b.to_json().unwrap();
        let back = FilterBank::from_json(&s).unwrap();
        assert_eq!(back, b);
        let tampered = s.replacen("\"lp_defect\":", "\"lp_defect\":1.0,\"x\":", 1);
        assert!(FilterBank::from_json(&tampered).is_err());
    }

    #[test]
    fn fractional_identity_and_tone() {
        let n = 1024;
        let x: Vec<f64> = (0..n).map(|t| 1.0 + (0.3 * t as f64).sin()).collect();
        let ts = TimeSeries::new(x.clone(), 1.0).unwrap();
        assert_eq!(fractional_derivative(&ts, 0.0).unwrap(), ts);
        assert!(fractional_derivative(&ts, 2.5).is_err());

        let k = 37;
        let w0 = 2.0 * PI * k as f64 / n as f64;
        let x: Vec<f64> = (0..n).map(|t| (w0 * t as f64).cos()).collect();
        let d = fractional_derivative(&TimeSeries::new(x, 1.0).unwrap(), 1.0).unwrap();
        for (t, v) in d.samples().iter().enumerate() {
            let expect = w0 * (w0 * t as f64 + PI / 2.0).cos();
            assert!((v - expect).abs() < 1e-12);
        }
    }
}

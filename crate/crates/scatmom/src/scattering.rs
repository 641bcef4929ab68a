//! Scattering moments: iterated wavelet-modulus averages, their normalized
//! ratios, per-window estimates and the mean-square error diagnostic.
//!
//! A path (j₁, …, j_m) is estimated by the mean of ||X★ψ_{j₁}|★…|★ψ_{j_m}|
//! over the samples of each block that are farther than Σ h_{j_k} from both
//! block edges (h_j is the filter half-width), then averaged over blocks.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{mean, pairwise_sum};
use crate::signal::{format_f64, TimeSeries};
use crate::wavelet::{Convolver, FilterBank, WaveletError};

/// Relative floor below which a denominator is treated as zero.
pub const NORMALIZATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScatterError {
    #[error("max_order must be 1, 2 or 3, got {0}")]
    BadOrder(usize),
    #[error("J={j} must be below the averaging scale M={m}")]
    JNotBelowM { j: i32, m: i32 },
    #[error("averaging scale M={m} exceeds log2 of the block length {block_len}")]
    MTooLarge { m: i32, block_len: usize },
    #[error("no first-order index with J0={j0} < j1 <= J={j}")]
    EmptyIndexSet { j0: i32, j: i32 },
    #[error("scale {0} is not covered by the filter bank")]
    NotInBank(i32),
    #[error("path {path:?} needs {needed} samples per block, block has {block_len}")]
    InsufficientLength {
        path: Vec<i32>,
        needed: usize,
        block_len: usize,
    },
    #[error("only {0} averaging windows fit; need at least 2")]
    FewWindows(usize),
    #[error("window spacing must be at least 1")]
    BadSpacing,
    #[error("reference moment {value:e} below floor {floor:e}")]
    ReferenceFloor { value: f64, floor: f64 },
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error("scattering JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub max_order: usize,
    pub j0: i32,
    pub j: i32,
}

impl ScatterConfig {
    pub fn new(max_order: usize, j0: i32, j: i32) -> Self {
        Self { max_order, j0, j }
    }

    /// Paths in moment-vector order: order 1 ascending, then order 2, then
    /// order 3, each lexicographic with strictly increasing scales.
    pub fn paths(&self) -> Vec<Vec<i32>> {
        let scales: Vec<i32> = (self.j0 + 1..=self.j).collect();
        let mut out: Vec<Vec<i32>> = scales.iter().map(|&a| vec![a]).collect();
        if self.max_order >= 2 {
            for &a in &scales {
                for b in a + 1..=self.j {
                    out.push(vec![a, b]);
                }
            }
        }
        if self.max_order >= 3 {
            for &a in &scales {
                for b in a + 1..=self.j {
                    for c in b + 1..=self.j {
                        out.push(vec![a, b, c]);
                    }
                }
            }
        }
        out
    }
}

/// Estimated scattering moments Ŝ X with their index bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VectorDump", try_from = "VectorDump")]
pub struct ScatteringVector {
    pub order1: BTreeMap<i32, f64>,
    pub order2: BTreeMap<(i32, i32), f64>,
    pub higher: BTreeMap<Vec<i32>, f64>,
    /// Scale of the first-order reference S̄X(0) used for normalization.
    pub reference_scale: i32,
    pub reference: f64,
    pub j0: i32,
    pub j: i32,
    pub m: i32,
    pub n_blocks: usize,
    pub per_block: Vec<ScatteringVector>,
}

impl ScatteringVector {
    fn from_values(
        cfg: &ScatterConfig,
        m: i32,
        reference_scale: i32,
        paths: &[Vec<i32>],
        values: &[f64],
        reference: f64,
        n_blocks: usize,
    ) -> Self {
        let mut sv = Self {
            order1: BTreeMap::new(),
            order2: BTreeMap::new(),
            higher: BTreeMap::new(),
            reference_scale,
            reference,
            j0: cfg.j0,
            j: cfg.j,
            m,
            n_blocks,
            per_block: Vec::new(),
        };
        for (p, &v) in paths.iter().zip(values) {
            sv.insert(p, v);
        }
        sv
    }

    fn insert(&mut self, path: &[i32], v: f64) {
        match path {
            [a] => {
                self.order1.insert(*a, v);
            }
            [a, b] => {
                self.order2.insert((*a, *b), v);
            }
            _ => {
                self.higher.insert(path.to_vec(), v);
            }
        }
    }

    pub fn get(&self, path: &[i32]) -> Option<f64> {
        match path {
            [a] => self.order1.get(a).copied(),
            [a, b] => self.order2.get(&(*a, *b)).copied(),
            _ => self.higher.get(path).copied(),
        }
    }

    /// Order-1 and order-2 moments in canonical order (the GMM vector).
    pub fn moment_vector(&self) -> Vec<f64> {
        self.order1.values().chain(self.order2.values()).copied().collect()
    }

    pub fn moment_paths(&self) -> Vec<Vec<i32>> {
        self.order1
            .keys()
            .map(|&a| vec![a])
            .chain(self.order2.keys().map(|&(a, b)| vec![a, b]))
            .collect()
    }

    /// Number p of moments in the GMM vector.
    pub fn p(&self) -> usize {
        self.order1.len() + self.order2.len()
    }

    /// Every stored (path, value), in canonical order.
    pub fn entries(&self) -> Vec<(Vec<i32>, f64)> {
        self.order1
            .iter()
            .map(|(&a, &v)| (vec![a], v))
            .chain(self.order2.iter().map(|(&(a, b), &v)| (vec![a, b], v)))
            .chain(self.higher.iter().map(|(p, &v)| (p.clone(), v)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, ScatterError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ScatterError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Flat `order,j1,j2,j3,value,log2_value` table; unused scale columns
    /// are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), ScatterError> {
        writeln!(out, "order,j1,j2,j3,value,log2_value")?;
        for (p, v) in self.entries() {
            let cell = |k: usize| p.get(k).map_or(String::new(), |j| j.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.len(),
                cell(0),
                cell(1),
                cell(2),
                format_f64(v),
                format_f64(v.log2())
            )?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct EntryDump {
    path: Vec<i32>,
    value: f64,
    log2_value: f64,
}

#[derive(Serialize, Deserialize)]
struct VectorDump {
    j0: i32,
    j: i32,
    m: i32,
    n_blocks: usize,
    reference_scale: i32,
    reference: f64,
    entries: Vec<EntryDump>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    per_block: Vec<VectorDump>,
}

impl From<ScatteringVector> for VectorDump {
    fn from(sv: ScatteringVector) -> Self {
        Self {
            j0: sv.j0,
            j: sv.j,
            m: sv.m,
            n_blocks: sv.n_blocks,
            reference_scale: sv.reference_scale,
            reference: sv.reference,
            entries: sv
                .entries()
                .into_iter()
                .map(|(path, value)| EntryDump {
                    path,
                    value,
                    log2_value: value.log2(),
                })
                .collect(),
            per_block: sv.per_block.into_iter().map(Into::into).collect(),
        }
    }
}

impl TryFrom<VectorDump> for ScatteringVector {
    type Error = String;

    fn try_from(d: VectorDump) -> Result<Self, String> {
        let mut sv = ScatteringVector {
            order1: BTreeMap::new(),
            order2: BTreeMap::new(),
            higher: BTreeMap::new(),
            reference_scale: d.reference_scale,
            reference: d.reference,
            j0: d.j0,
            j: d.j,
            m: d.m,
            n_blocks: d.n_blocks,
            per_block: Vec::new(),
        };
        for e in d.entries {
            if e.path.is_empty() {
                return Err("empty scattering path".into());
            }
            sv.insert(&e.path, e.value);
        }
        sv.per_block = d
            .per_block
            .into_iter()
            .map(ScatteringVector::try_from)
            .collect::<Result<_, _>>()?;
        Ok(sv)
    }
}

/// Normalized moments S̃X(j₁) = S̄X(j₁)/S̄X(0) and
/// S̃X(j₁,…,j_m) = S̄X(j₁,…,j_m)/S̄X(j₁,…,j_{m−1}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScattering {
    pub order1_norm: BTreeMap<i32, f64>,
    #[serde(with = "pair_map")]
    pub order2_norm: BTreeMap<(i32, i32), f64>,
    #[serde(with = "path_map")]
    pub higher_norm: BTreeMap<Vec<i32>, f64>,
    pub reference_scale: i32,
    /// Paths left out because their denominator fell below the floor.
    pub omitted: Vec<Vec<i32>>,
}

impl NormalizedScattering {
    /// log₂ S̃X(j₁, j₁+l) curves keyed by l, one entry per j₁.
    pub fn curves_by_lag(&self) -> BTreeMap<i32, BTreeMap<i32, f64>> {
        let mut out: BTreeMap<i32, BTreeMap<i32, f64>> = BTreeMap::new();
        for (&(a, b), &v) in &self.order2_norm {
            out.entry(b - a).or_default().insert(a, v.log2());
        }
        out
    }
}

pub fn normalize(sv: &ScatteringVector) -> Result<NormalizedScattering, ScatterError> {
    let max1 = sv.order1.values().copied().fold(sv.reference, f64::max);
    let floor = NORMALIZATION_FLOOR * max1;
    if !(sv.reference > floor) {
        return Err(ScatterError::ReferenceFloor {
            value: sv.reference,
            floor,
        });
    }
    let mut omitted = Vec::new();
    let order1_norm = sv.order1.iter().map(|(&a, &v)| (a, v / sv.reference)).collect();
    let mut order2_norm = BTreeMap::new();
    for (&(a, b), &v) in &sv.order2 {
        match sv.order1.get(&a) {
            Some(&d) if d > floor => {
                order2_norm.insert((a, b), v / d);
            }
            _ => omitted.push(vec![a, b]),
        }
    }
    let mut higher_norm = BTreeMap::new();
    for (p, &v) in &sv.higher {
        match sv.get(&p[..p.len() - 1]) {
            Some(d) if d > floor => {
                higher_norm.insert(p.clone(), v / d);
            }
            _ => omitted.push(p.clone()),
        }
    }
    Ok(NormalizedScattering {
        order1_norm,
        order2_norm,
        higher_norm,
        reference_scale: sv.reference_scale,
        omitted,
    })
}

fn validate(ts: &TimeSeries, bank: &FilterBank, cfg: &ScatterConfig) -> Result<(), ScatterError> {
    if !(1..=3).contains(&cfg.max_order) {
        return Err(ScatterError::BadOrder(cfg.max_order));
    }
    let m = bank.m();
    if cfg.j >= m {
        return Err(ScatterError::JNotBelowM { j: cfg.j, m });
    }
    if cfg.j <= cfg.j0 {
        return Err(ScatterError::EmptyIndexSet { j0: cfg.j0, j: cfg.j });
    }
    if 2f64.powi(m) > ts.block_len() as f64 {
        return Err(ScatterError::MTooLarge {
            m,
            block_len: ts.block_len(),
        });
    }
    let first = (cfg.j0 + 1).max(reference_scale(bank, cfg));
    if bank.j_min() > first {
        return Err(ScatterError::NotInBank(cfg.j0 + 1));
    }
    Ok(())
}

fn reference_scale(bank: &FilterBank, cfg: &ScatterConfig) -> i32 {
    cfg.j0.max(bank.j_min())
}

fn path_margin(bank: &FilterBank, path: &[i32]) -> Result<usize, ScatterError> {
    let mut total = 0;
    for &j in path {
        total += bank.half_width(j).map_err(|_| ScatterError::NotInBank(j))?;
    }
    Ok(total)
}

fn check_length(bank: &FilterBank, path: &[i32], block_len: usize) -> Result<usize, ScatterError> {
    let margin = path_margin(bank, path)?;
    if 2 * margin >= block_len {
        return Err(ScatterError::InsufficientLength {
            path: path.to_vec(),
            needed: 2 * margin + 1,
            block_len,
        });
    }
    Ok(margin)
}

fn interior_mean(u: &[f64], margin: usize) -> f64 {
    mean(&u[margin..u.len() - margin])
}

/// Full-length modulus ||x★ψ_{j₁}|★…|★ψ_{j_m}| on one block.
fn path_modulus(conv: &Convolver, x: &[f64], path: &[i32]) -> Vec<f64> {
    let mut spec = conv.spectrum_real(x);
    let mut u = Vec::new();
    for (k, &j) in path.iter().enumerate() {
        u = conv.modulus(&spec, j);
        if k + 1 < path.len() {
            spec = conv.spectrum_real(&u);
        }
    }
    u
}

/// Interior means for every path of a block, sharing intermediate moduli.
fn block_means(
    conv: &Convolver,
    x: &[f64],
    cfg: &ScatterConfig,
    margins: &HashMap<Vec<i32>, usize>,
    extra: Option<i32>,
) -> HashMap<Vec<i32>, f64> {
    let mut out = HashMap::new();
    let spec = conv.spectrum_real(x);
    let mut first: Vec<i32> = (cfg.j0 + 1..=cfg.j).collect();
    if let Some(r) = extra {
        first.insert(0, r);
    }
    for j1 in first {
        let u1 = conv.modulus(&spec, j1);
        let p1 = vec![j1];
        out.insert(p1.clone(), interior_mean(&u1, margins[&p1]));
        if cfg.max_order < 2 || j1 <= cfg.j0 {
            continue;
        }
        let s1 = conv.spectrum_real(&u1);
        for j2 in j1 + 1..=cfg.j {
            let u2 = conv.modulus(&s1, j2);
            let p2 = vec![j1, j2];
            out.insert(p2.clone(), interior_mean(&u2, margins[&p2]));
            if cfg.max_order < 3 {
                continue;
            }
            let s2 = conv.spectrum_real(&u2);
            for j3 in j2 + 1..=cfg.j {
                let u3 = conv.modulus(&s2, j3);
                let p3 = vec![j1, j2, j3];
                out.insert(p3.clone(), interior_mean(&u3, margins[&p3]));
            }
        }
    }
    out
}

struct Plan {
    paths: Vec<Vec<i32>>,
    margins: HashMap<Vec<i32>, usize>,
    reference_scale: i32,
    separate_reference: bool,
    conv: Convolver,
}

fn plan(ts: &TimeSeries, bank: &FilterBank, cfg: &ScatterConfig, with_phi: bool) -> Result<Plan, ScatterError> {
    validate(ts, bank, cfg)?;
    let paths = cfg.paths();
    let reference_scale = reference_scale(bank, cfg);
    let separate_reference = reference_scale <= cfg.j0;
    let mut margins = HashMap::new();
    for p in &paths {
        margins.insert(p.clone(), check_length(bank, p, ts.block_len())?);
    }
    let r = vec![reference_scale];
    margins.insert(r.clone(), check_length(bank, &r, ts.block_len())?);
    let mut scales: Vec<i32> = (cfg.j0 + 1..=cfg.j).collect();
    if separate_reference {
        scales.push(reference_scale);
    }
    let conv = Convolver::new(bank, ts.block_len(), &scales, with_phi)?;
    Ok(Plan {
        paths,
        margins,
        reference_scale,
        separate_reference,
        conv,
    })
}

/// Averaged scattering estimator over all blocks; `per_block` holds the
/// per-realization vectors when the series has at least two blocks.
pub fn scatter(ts: &TimeSeries, bank: &FilterBank, cfg: &ScatterConfig) -> Result<ScatteringVector, ScatterError> {
    let plan = plan(ts, bank, cfg, false)?;
    let extra = plan.separate_reference.then_some(plan.reference_scale);
    let blocks: Vec<&[f64]> = ts.blocks().collect();
    let per_block: Vec<HashMap<Vec<i32>, f64>> = blocks
        .par_iter()
        .map(|x| block_means(&plan.conv, x, cfg, &plan.margins, extra))
        .collect();

    let rpath = vec![plan.reference_scale];
    let block_vector = |h: &HashMap<Vec<i32>, f64>| -> ScatteringVector {
        let values: Vec<f64> = plan.paths.iter().map(|p| h[p]).collect();
        ScatteringVector::from_values(cfg, bank.m(), plan.reference_scale, &plan.paths, &values, h[&rpath], 1)
    };
    let aggregate = |p: &Vec<i32>| -> f64 {
        let v: Vec<f64> = per_block.iter().map(|h| h[p]).collect();
        mean(&v)
    };
    let values: Vec<f64> = plan.paths.iter().map(aggregate).collect();
    let mut sv = ScatteringVector::from_values(
        cfg,
        bank.m(),
        plan.reference_scale,
        &plan.paths,
        &values,
        aggregate(&rpath),
        ts.n_blocks(),
    );
    if ts.n_blocks() >= 2 {
        sv.per_block = per_block.iter().map(block_vector).collect();
    }
    Ok(sv)
}

/// Per-window estimates Ŝ X_k. With several blocks, one vector per block;
/// with a single block, |…|★φ_M sampled every Δ·2^M samples inside the
/// interior shared by all paths.
pub fn per_block_scatter(
    ts: &TimeSeries,
    bank: &FilterBank,
    cfg: &ScatterConfig,
    delta: usize,
) -> Result<Vec<ScatteringVector>, ScatterError> {
    if delta == 0 {
        return Err(ScatterError::BadSpacing);
    }
    if ts.n_blocks() >= 2 {
        return Ok(scatter(ts, bank, cfg)?.per_block);
    }
    let plan = plan(ts, bank, cfg, true)?;
    let positions = window_positions(&plan, bank, ts.block_len(), delta);
    if positions.len() < 2 {
        return Err(ScatterError::FewWindows(positions.len()));
    }
    let x = ts.block(0);
    let mut all_paths = plan.paths.clone();
    let rpath = vec![plan.reference_scale];
    if plan.separate_reference {
        all_paths.push(rpath.clone());
    }
    let smoothed: HashMap<Vec<i32>, Vec<f64>> = all_paths
        .par_iter()
        .map(|p| {
            let u = path_modulus(&plan.conv, x, p);
            (p.clone(), plan.conv.smooth(&u))
        })
        .collect();
    Ok(positions
        .iter()
        .map(|&t| {
            let values: Vec<f64> = plan.paths.iter().map(|p| smoothed[p][t]).collect();
            ScatteringVector::from_values(
                cfg,
                bank.m(),
                plan.reference_scale,
                &plan.paths,
                &values,
                smoothed[&rpath][t],
                1,
            )
        })
        .collect())
}

fn window_positions(plan: &Plan, bank: &FilterBank, len: usize, delta: usize) -> Vec<usize> {
    let margin = plan.margins.values().copied().max().unwrap_or(0) + bank.phi_half_width();
    if 2 * margin >= len {
        return Vec::new();
    }
    let step = delta << bank.m();
    (margin..len - margin).step_by(step).collect()
}

/// Plug-in mean-square error bound σ²(|X★ψ_{j₁}|) − Σ Ŝ X(j₁,…)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub j1: i32,
    pub variance: f64,
    /// Subtracted moments as (path, Ŝ value), order-2 first.
    pub terms: Vec<(Vec<i32>, f64)>,
    pub bound: f64,
}

impl ErrorBound {
    /// Bound using only the first `k` subtracted terms.
    pub fn partial(&self, k: usize) -> f64 {
        let s: Vec<f64> = self.terms.iter().take(k).map(|(_, v)| v * v).collect();
        (self.variance - pairwise_sum(&s)).max(0.0)
    }
}

/// Second-order terms use every bank scale j₂ ≤ M that leaves valid samples
/// in a block (including j₂ ≤ j₁, computed on demand); higher-order terms
/// come from `sv`.
pub fn error_bound(
    ts: &TimeSeries,
    bank: &FilterBank,
    j1: i32,
    sv: &ScatteringVector,
) -> Result<ErrorBound, ScatterError> {
    let len = ts.block_len();
    let m1 = check_length(bank, &[j1], len)?;
    let j2s: Vec<i32> = (bank.j_min()..=bank.m())
        .filter(|&j2| path_margin(bank, &[j1, j2]).is_ok_and(|m| 2 * m < len))
        .collect();
    let mut scales = j2s.clone();
    if !scales.contains(&j1) {
        scales.push(j1);
    }
    let conv = Convolver::new(bank, len, &scales, false)?;
    let blocks: Vec<&[f64]> = ts.blocks().collect();
    let per_block: Vec<(Vec<f64>, Vec<f64>)> = blocks
        .par_iter()
        .map(|x| {
            let u1 = conv.modulus(&conv.spectrum_real(x), j1);
            let s1 = conv.spectrum_real(&u1);
            let second = j2s
                .iter()
                .map(|&j2| {
                    if sv.order2.contains_key(&(j1, j2)) {
                        return f64::NAN;
                    }
                    let margin = m1 + conv.margin(j2);
                    interior_mean(&conv.modulus(&s1, j2), margin)
                })
                .collect();
            (u1[m1..len - m1].to_vec(), second)
        })
        .collect();

    let pooled: Vec<f64> = per_block.iter().flat_map(|(u, _)| u.iter().copied()).collect();
    let mu = mean(&pooled);
    let dev: Vec<f64> = pooled.iter().map(|v| (v - mu) * (v - mu)).collect();
    let variance = mean(&dev);

    let mut terms = Vec::new();
    for (i, &j2) in j2s.iter().enumerate() {
        let v = match sv.order2.get(&(j1, j2)) {
            Some(&v) => v,
            None => {
                let vals: Vec<f64> = per_block.iter().map(|(_, s)| s[i]).collect();
                mean(&vals)
            }
        };
        terms.push((vec![j1, j2], v));
    }
    for (p, &v) in &sv.higher {
        if p[0] == j1 && p.iter().all(|&j| j <= bank.m()) {
            terms.push((p.clone(), v));
        }
    }
    let mut eb = ErrorBound {
        j1,
        variance,
        terms,
        bound: 0.0,
    };
    eb.bound = eb.partial(eb.terms.len());
    Ok(eb)
}

mod pair_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(i32, i32), f64>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<(i32, i32, f64)> = m.iter().map(|(&(a, b), &x)| (a, b, x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(i32, i32), f64>, D::Error> {
        let v = Vec::<(i32, i32, f64)>::deserialize(d)?;
        Ok(v.into_iter().map(|(a, b, x)| ((a, b), x)).collect())
    }
}

mod path_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<Vec<i32>, f64>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<(&Vec<i32>, f64)> = m.iter().map(|(p, &x)| (p, x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Vec<i32>, f64>, D::Error> {
        let v = Vec::<(Vec<i32>, f64)>::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

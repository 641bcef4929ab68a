use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use scatmom::analysis::{
    fit_log2_slope, intermittency_summary, stationarity_across_scales, IntermittencySummary, SlopeFit,
    StationarityReport,
};
use scatmom::estimation::{
    gmm_fit, log_covariance_regression, log_spaced_lags, scattering_slope_regression, wavelet_moment_regression,
    GmmFit, MomentCondition, RegressionEstimate, SearchOptions, SlopeRegression, Weighting,
};
use scatmom::processes::{simulate, Model, ProcessSpec, RngTrace};
use scatmom::scattering::{normalize, scatter, NormalizedScattering, ScatterConfig, ScatteringVector};
use scatmom::signal::{format_f64, load_csv, segment, write_csv, Column, SignalError, TimeSeries};
use scatmom::wavelet::{build_filter_bank, min_fft_len, phi_domination, FilterBank, WaveletFamily};

use crate::args::{
    Estimator, Family, FitArgs, InputArgs, ModelArgs, PhiChoice, ScatterArgs, SimulateArgs, VerifyBankArgs,
    WeightingArg,
};
use crate::output::{flat_parameters, hash_file, Provenance};
use crate::CliError;

fn model_from_args(a: &ModelArgs) -> Result<Model, CliError> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| CliError::Usage(format!("--{flag} is required for family {:?}", a.family)))
    };
    Ok(match a.family {
        Family::Poisson => Model::Poisson {
            intensity: need(a.intensity, "intensity")?,
        },
        Family::Fbm => Model::Fbm {
            hurst: need(a.hurst, "hurst")?,
        },
        Family::LevyStable => Model::Levy {
            alpha: need(a.alpha, "alpha")?,
        },
        Family::MrmCascade => Model::MrmCascade {
            lambda2: need(a.lambda2, "lambda2")?,
            integral_scale: a.integral_scale,
        },
        Family::MrmStationary => Model::MrmStationary {
            lambda2: need(a.lambda2, "lambda2")?,
            integral_scale: a.integral_scale,
        },
        Family::Mrw => Model::Mrw {
            lambda2: need(a.lambda2, "lambda2")?,
            integral_scale: a.integral_scale,
        },
    })
}

/// Model template for fitting, its parameter set to the middle of the
/// default search interval.
fn template(family: Family, integral_scale: u32) -> (Model, (f64, f64)) {
    let bounds = default_bounds(family);
    let mid = 0.5 * (bounds.0 + bounds.1);
    let model = match family {
        Family::Poisson => Model::Poisson { intensity: mid },
        Family::Fbm => Model::Fbm { hurst: mid },
        Family::LevyStable => Model::Levy { alpha: mid },
        Family::MrmCascade => Model::MrmCascade {
            lambda2: mid,
            integral_scale,
        },
        Family::MrmStationary => Model::MrmStationary {
            lambda2: mid,
            integral_scale,
        },
        Family::Mrw => Model::Mrw {
            lambda2: mid,
            integral_scale,
        },
    };
    (model, bounds)
}

fn default_bounds(family: Family) -> (f64, f64) {
    match family {
        Family::Poisson => (1e-6, 1e-1),
        Family::Fbm => (0.05, 0.95),
        Family::LevyStable => (1.05, 2.0),
        Family::MrmCascade | Family::MrmStationary | Family::Mrw => (0.005, 0.5),
    }
}

fn load_input(a: &InputArgs) -> Result<(TimeSeries, String), CliError> {
    if !a.input.is_file() {
        return Err(CliError::Input(format!("input file {} not found", a.input.display())));
    }
    let hash = hash_file(&a.input)?;
    let column: Column = a.column.parse().expect("infallible");
    let ts = load_csv(&a.input, &column).map_err(|e| match e {
        SignalError::Open { .. } | SignalError::MissingColumn(_) => CliError::Input(e.to_string()),
        other => CliError::Signal(other),
    })?;
    let ts = match a.block_len {
        Some(b) => segment(&ts, b).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ts,
    };
    Ok((ts, hash))
}

fn bank_for(j_min: i32, m: i32) -> Result<FilterBank, CliError> {
    Ok(FilterBank::default_for(j_min, m)?)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

#[derive(Serialize)]
struct SpecFile {
    spec: ProcessSpec,
    rng_trace: Vec<RngTrace>,
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<(), CliError> {
    let model = model_from_args(&a.model)?;
    let spec = ProcessSpec::new(model, a.length, a.seed, a.realizations);
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ens = simulate(&spec)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &[("value", ens.series.samples())])?;
    let prov = Provenance {
        command: "simulate",
        parameters: flat_parameters(a),
        seed: Some(a.seed),
        input_hash: None,
    };
    prov.emit(&a.out, &csv)?;
    let spec_json = json_bytes(&SpecFile {
        spec: ens.spec,
        rng_trace: ens.rng_trace,
    })?;
    prov.emit(&spec_path(&a.out), &spec_json)?;
    Ok(())
}

pub fn spec_path(out: &Path) -> std::path::PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.spec.json"))
}

#[derive(Serialize)]
struct Summary {
    stationarity: StationarityReport,
    intermittency: IntermittencySummary,
}

pub fn scatter_cmd(a: &ScatterArgs) -> Result<(), CliError> {
    if a.order == 0 || a.order > 3 {
        return Err(CliError::Usage(format!("--order must be 1, 2 or 3, got {}", a.order)));
    }
    if a.summary && a.order < 2 {
        return Err(CliError::Usage("--summary needs --order 2 or higher".into()));
    }
    let (ts, hash) = load_input(&a.input)?;
    let bank = bank_for(a.bank.j_min, a.bank.m.unwrap_or(a.j + 1))?;
    let cfg = ScatterConfig::new(a.order, a.j0, a.j);
    let sv = scatter(&ts, &bank, &cfg)?;
    let ns = normalize(&sv)?;
    let prov = Provenance {
        command: "scatter",
        parameters: flat_parameters(a),
        seed: None,
        input_hash: Some(hash),
    };
    let dir = &a.out_dir;
    prov.emit(&dir.join("scattering.json"), sv.to_json()?.as_bytes())?;
    let mut raw = Vec::new();
    sv.write_csv(&mut raw)?;
    prov.emit(&dir.join("scattering.csv"), &raw)?;
    prov.emit(&dir.join("normalized.csv"), &normalized_csv(&ns))?;
    prov.emit(&dir.join("curves.csv"), &curves_csv(&ns))?;

    let lo = a
        .fit_lo
        .unwrap_or_else(|| sv.order1.keys().next().copied().unwrap_or(a.j));
    let hi = a.fit_hi.unwrap_or(a.j);
    let fit: SlopeFit = fit_log2_slope(&sv.order1, (lo, hi))?;
    prov.emit(&dir.join("fit.json"), &json_bytes(&fit)?)?;

    if a.summary {
        let summary = Summary {
            stationarity: stationarity_across_scales(&ns, (1, a.j - a.j0), a.spread_threshold)?,
            intermittency: intermittency_summary(&ns)?,
        };
        prov.emit(&dir.join("summary.json"), &json_bytes(&summary)?)?;
    }
    Ok(())
}

/// `order,j1,j2,j3,l,value,log2_value` for S̃X; l = j_last − j1.
fn normalized_csv(ns: &NormalizedScattering) -> Vec<u8> {
    let mut rows = vec!["order,j1,j2,j3,l,value,log2_value".to_string()];
    let mut push = |p: &[i32], v: f64| {
        let cell = |k: usize| p.get(k).map_or(String::new(), |j| j.to_string());
        let l = if p.len() > 1 {
            (p[p.len() - 1] - p[0]).to_string()
        } else {
            String::new()
        };
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            p.len(),
            cell(0),
            cell(1),
            cell(2),
            l,
            format_f64(v),
            format_f64(v.log2())
        ));
    };
    for (&j, &v) in &ns.order1_norm {
        push(&[j], v);
    }
    for (&(a, b), &v) in &ns.order2_norm {
        push(&[a, b], v);
    }
    for (p, &v) in &ns.higher_norm {
        push(p, v);
    }
    (rows.join("\n") + "\n").into_bytes()
}

/// log₂ S̃X(j₁, j₁+l) reindexed by l, one row per (l, j₁).
fn curves_csv(ns: &NormalizedScattering) -> Vec<u8> {
    let mut rows = vec!["l,j1,j2,log2_value".to_string()];
    for (l, curve) in ns.curves_by_lag() {
        for (j1, v) in curve {
            rows.push(format!("{l},{j1},{},{}", j1 + l, format_f64(v)));
        }
    }
    (rows.join("\n") + "\n").into_bytes()
}

#[derive(Serialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
enum FitReport {
    Gmm(GmmFit),
    Logcov {
        theta_name: String,
        fit: RegressionEstimate,
        scale: i32,
        lags: Vec<usize>,
    },
    Wavelet {
        theta_name: String,
        fit: RegressionEstimate,
        j_range: (i32, i32),
    },
    ScatteringSlope {
        theta_name: String,
        fit: SlopeRegression,
        delta: i32,
    },
}

pub fn fit_cmd(a: &FitArgs) -> Result<Vec<u8>, CliError> {
    let (ts, hash) = load_input(&a.input)?;
    let report = match a.estimator {
        Estimator::Gmm => {
            let (model, (dlo, dhi)) = template(a.family, a.integral_scale);
            let opts = SearchOptions::new(a.lo.unwrap_or(dlo), a.hi.unwrap_or(dhi));
            if !(opts.lo < opts.hi) {
                return Err(CliError::Usage(format!("empty bounds [{}, {}]", opts.lo, opts.hi)));
            }
            let bank = Arc::new(bank_for(a.bank.j_min, a.bank.m.unwrap_or(a.j + 1))?);
            let cfg = ScatterConfig::new(2, a.j0, a.j);
            let mc = MomentCondition::from_series(&ts, bank, cfg, a.delta, model, a.n_sim, a.seed)?;
            let weighting = match a.weighting {
                WeightingArg::TwoStep => Weighting::TwoStep,
                WeightingArg::Identity => Weighting::Identity,
            };
            FitReport::Gmm(gmm_fit(&mc, &opts, weighting)?)
        }
        Estimator::Logcov => {
            let lo = a.lag_lo.unwrap_or(1 << (a.scale + 2).max(0));
            let cap = ts.block_len() / 4;
            let hi = a
                .lag_hi
                .unwrap_or_else(|| (1usize << a.integral_scale.saturating_sub(1)).min(cap));
            let lags = log_spaced_lags(lo, hi);
            let bank = bank_for(a.bank.j_min, a.bank.m.unwrap_or(a.scale + 1))?;
            let fit = log_covariance_regression(&ts, &bank, a.scale, &lags)?;
            FitReport::Logcov {
                theta_name: "lambda2".into(),
                fit,
                scale: a.scale,
                lags,
            }
        }
        Estimator::Wavelet => {
            let bank = bank_for(a.bank.j_min, a.bank.m.unwrap_or(a.j_hi + 1))?;
            let fit = wavelet_moment_regression(&ts, &bank, a.j_lo, a.j_hi)?;
            FitReport::Wavelet {
                theta_name: "lambda2".into(),
                fit,
                j_range: (a.j_lo, a.j_hi),
            }
        }
        Estimator::ScatteringSlope => {
            let bank = bank_for(a.bank.j_min, a.bank.m.unwrap_or(a.j + 1))?;
            let sv: ScatteringVector = scatter(&ts, &bank, &ScatterConfig::new(2, a.j0, a.j))?;
            let fit = scattering_slope_regression(&normalize(&sv)?, a.slope_delta)?;
            FitReport::ScatteringSlope {
                theta_name: "alpha".into(),
                fit,
                delta: a.slope_delta,
            }
        }
    };
    let bytes = json_bytes(&report)?;
    if let Some(out) = &a.out {
        let prov = Provenance {
            command: "fit",
            parameters: flat_parameters(a),
            seed: Some(a.seed),
            input_hash: Some(hash),
        };
        prov.emit(out, &bytes)?;
    }
    Ok(bytes)
}

#[derive(Serialize)]
struct BankReport {
    family: WaveletFamily,
    n_fft: usize,
    j_min: i32,
    m: i32,
    phi: PhiChoice,
    lp_defect: f64,
    phi_holds: bool,
    phi_margin: f64,
    phi_violations: usize,
    vanishing_moments: usize,
    max_moment_residual: f64,
    analyticity_ratio: f64,
    pass: bool,
}

/// Returns the report bytes and whether every certificate passed.
pub fn verify_bank_cmd(a: &VerifyBankArgs) -> Result<(Vec<u8>, bool), CliError> {
    let n_fft = a.n_fft.unwrap_or_else(|| min_fft_len(a.m).max(1 << 10));
    let bank = build_filter_bank(n_fft, a.j_min, a.m, WaveletFamily::LogGaussian)?;
    let mut cert = bank.certificates();
    let phi = match a.phi {
        PhiChoice::Default => bank.verify_phi(),
        PhiChoice::Allpass => phi_domination(&bank, &vec![1.0; n_fft]),
    };
    cert.phi_holds = phi.holds;
    cert.phi_margin = phi.margin;
    let pass = cert.all_pass();
    let report = BankReport {
        family: bank.family(),
        n_fft,
        j_min: a.j_min,
        m: a.m,
        phi: a.phi,
        lp_defect: cert.lp_defect,
        phi_holds: phi.holds,
        phi_margin: phi.margin,
        phi_violations: phi.violations,
        vanishing_moments: cert.vanishing_moments,
        max_moment_residual: cert.max_moment_residual,
        analyticity_ratio: cert.analyticity_ratio,
        pass,
    };
    let bytes = json_bytes(&report)?;
    if let Some(out) = &a.out {
        let prov = Provenance {
            command: "verify-bank",
            parameters: flat_parameters(a),
            seed: None,
            input_hash: None,
        };
        prov.emit(out, &bytes)?;
    }
    Ok((bytes, pass))
}

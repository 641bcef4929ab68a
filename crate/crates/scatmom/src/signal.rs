//! Time-series container, CSV ingestion, block segmentation and intraday
//! deseasonalization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("series needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("sample spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("block length {block_len} does not tile {len} samples")]
    BadBlocks { len: usize, block_len: usize },
    #[error("block length {block_len} exceeds series length {len}")]
    BlockTooLong { len: usize, block_len: usize },
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("column {0} not found")]
    MissingColumn(String),
    #[error("row {row}: cannot parse {value:?} as a number")]
    NotNumeric { row: usize, value: String },
    #[error("row {row}: value {value} is not finite")]
    NonFiniteCell { row: usize, value: String },
    #[error("only {0} usable rows; need at least 2")]
    TooFewRows(usize),
    #[error("period must be positive and the series must span two periods (len {len}, period {period})")]
    BadPeriod { len: usize, period: usize },
    #[error("phase {0} has zero empirical variance")]
    ZeroVariance(usize),
    #[error("columns have different lengths")]
    RaggedColumns,
}

/// Uniformly sampled real signal made of `n_blocks` concatenated blocks of
/// equal length. Blocks are treated as independent realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    samples: Vec<f64>,
    dt: f64,
    n_blocks: usize,
    block_len: usize,
    dropped: usize,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self, SignalError> {
        let n = samples.len();
        Self::with_blocks(samples, dt, n)
    }

    /// Builds a series whose samples are split into blocks of `block_len`.
    pub fn with_blocks(samples: Vec<f64>, dt: f64, block_len: usize) -> Result<Self, SignalError> {
        if samples.len() < 2 {
            return Err(SignalError::TooShort(samples.len()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SignalError::BadSpacing(dt));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        if block_len == 0 || !samples.len().is_multiple_of(block_len) {
            return Err(SignalError::BadBlocks {
                len: samples.len(),
                block_len,
            });
        }
        Ok(Self {
            n_blocks: samples.len() / block_len,
            block_len,
            samples,
            dt,
            dropped: 0,
        })
    }

    /// Concatenates equal-length blocks.
    pub fn from_blocks(blocks: &[Vec<f64>], dt: f64) -> Result<Self, SignalError> {
        let block_len = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != block_len) {
            return Err(SignalError::RaggedColumns);
        }
        let samples: Vec<f64> = blocks.iter().flatten().copied().collect();
        Self::with_blocks(samples, dt, block_len.max(1))
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Samples dropped from the tail by [`segment`].
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.samples[k * self.block_len..(k + 1) * self.block_len]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks(self.block_len)
    }

    /// Same samples viewed as a single block.
    pub fn flatten(&self) -> TimeSeries {
        TimeSeries {
            samples: self.samples.clone(),
            dt: self.dt,
            n_blocks: 1,
            block_len: self.samples.len(),
            dropped: 0,
        }
    }

    /// Applies `f` to every block, keeping the block structure.
    pub fn map_blocks<F>(&self, f: F) -> Result<TimeSeries, SignalError>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let blocks: Vec<Vec<f64>> = self.blocks().map(f).collect();
        Self::from_blocks(&blocks, self.dt)
    }

    pub fn scaled(&self, a: f64) -> TimeSeries {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|v| *v *= a);
        out
    }
}

/// Column selector for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        })
    }
}

/// Reads one numeric column of a headered, comma-separated file. Row numbers
/// in errors count the header as row 1.
pub fn load_csv(path: impl AsRef<Path>, column: &Column) -> Result<TimeSeries, SignalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| SignalError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let idx = match column {
        Column::Index(i) if *i < headers.len() => *i,
        Column::Index(i) => return Err(SignalError::MissingColumn(i.to_string())),
        Column::Name(name) => headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SignalError::MissingColumn(name.clone()))?,
    };
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let cell = record.get(idx).unwrap_or("").trim();
        let value: f64 = cell.parse().map_err(|_| SignalError::NotNumeric {
            row,
            value: cell.to_string(),
        })?;
        if !value.is_finite() {
            return Err(SignalError::NonFiniteCell {
                row,
                value: cell.to_string(),
            });
        }
        samples.push(value);
    }
    if samples.len() < 2 {
        return Err(SignalError::TooFewRows(samples.len()));
    }
    TimeSeries::new(samples, 1.0)
}

/// Formats a value with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes equal-length named columns as CSV with 17 significant digits.
pub fn write_csv<W: Write>(out: W, columns: &[(&str, &[f64])]) -> Result<(), SignalError> {
    let n = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != n) {
        return Err(SignalError::RaggedColumns);
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(out));
    w.write_record(columns.iter().map(|c| c.0))?;
    let mut row = Vec::with_capacity(columns.len());
    for i in 0..n {
        row.clear();
        row.extend(columns.iter().map(|c| format_f64(c.1[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-blocks a series, dropping any trailing remainder (recorded in
/// [`TimeSeries::dropped`]).
pub fn segment(ts: &TimeSeries, block_len: usize) -> Result<TimeSeries, SignalError> {
    let len = ts.len();
    if block_len == 0 || block_len > len {
        return Err(SignalError::BlockTooLong { len, block_len });
    }
    let n_blocks = len / block_len;
    let kept = n_blocks * block_len;
    Ok(TimeSeries {
        samples: ts.samples[..kept].to_vec(),
        dt: ts.dt,
        n_blocks,
        block_len,
        dropped: len - kept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    pub period: usize,
    pub variance_by_phase: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deseasonalized {
    /// Normalized increments re-integrated from 0.
    pub series: TimeSeries,
    /// Normalized increments.
    pub returns: Vec<f64>,
    pub profile: SeasonalProfile,
}

/// Divides each increment by the square root of the phase-wise mean squared
/// increment, where the phase of increment `t` is `t mod period`.
pub fn deseasonalize(ts: &TimeSeries, period: usize) -> Result<Deseasonalized, SignalError> {
    let x = ts.samples();
    if period == 0 || x.len() < 2 * period {
        return Err(SignalError::BadPeriod { len: x.len(), period });
    }
    let incr: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sum = vec![0.0; period];
    let mut count = vec![0usize; period];
    for (t, r) in incr.iter().enumerate() {
        sum[t % period] += r * r;
        count[t % period] += 1;
    }
    let mut variance_by_phase = Vec::with_capacity(period);
    for p in 0..period {
        let v = if count[p] > 0 { sum[p] / count[p] as f64 } else { 0.0 };
        if !(v > 0.0 && v.is_finite()) {
            return Err(SignalError::ZeroVariance(p));
        }
        variance_by_phase.push(v);
    }
    let returns: Vec<f64> = incr
        .iter()
        .enumerate()
        .map(|(t, r)| r / variance_by_phase[t % period].sqrt())
        .collect();
    let mut level = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    level.push(acc);
    for r in &returns {
        acc += r;
        level.push(acc);
    }
    Ok(Deseasonalized {
        series: TimeSeries::new(level, ts.dt())?,
        returns,
        profile: SeasonalProfile {
            period,
            variance_by_phase,
        },
    })
}

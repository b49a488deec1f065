//! Daily price/market-cap ingestion and return statistics.
//!
//! Input is a UTF-8 CSV with the exact header
//! `date,asset,close_usd,market_cap_usd`, one row per (date, asset). Crypto
//! trades every calendar day, so the calendar is the full daily range of
//! the ingested data; single missing days are forward-filled from the prior
//! close and larger gaps abort ingestion. Annualization uses 365 days.

use crate::error::{Error, Result};
use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Days per year used for all annualization.
pub const ANNUALIZATION_DAYS: f64 = 365.0;

/// Default trailing window, in days, for rolling volatility.
pub const DEFAULT_VOL_WINDOW: usize = 90;

/// Short uppercase ticker identifying an asset within a universe.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(String);

impl AssetId {
    pub fn new(symbol: &str) -> Result<AssetId> {
        if symbol.is_empty() {
            return Err(Error::Validation("asset symbol must be non-empty".into()));
        }
        Ok(AssetId(symbol.to_ascii_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Per-asset daily closes and market caps over a contiguous daily calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceHistory {
    /// Asset universe, sorted by symbol.
    pub assets: Vec<AssetId>,
    /// Strictly increasing, gap-free daily dates.
    pub dates: Vec<NaiveDate>,
    /// `close[day][asset]` in USD, all positive.
    pub close: Vec<Vec<f64>>,
    /// `market_cap[day][asset]` in USD, all positive.
    pub market_cap: Vec<Vec<f64>>,
}

/// Ingestion options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Longest run of consecutive missing days that may be forward-filled.
    pub max_gap_days: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { max_gap_days: 3 }
    }
}

/// A cell that was forward-filled during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledCell {
    pub date: NaiveDate,
    pub asset: AssetId,
}

/// What ingestion did to the raw file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Rows outside the requested date range, skipped without error.
    pub rows_out_of_range: usize,
    /// Cells synthesized by the forward-fill rule.
    pub filled: Vec<FilledCell>,
}

/// Reads and validates a price history file.
pub fn load_price_history(
    path: &Path,
    range: Option<(NaiveDate, NaiveDate)>,
    opts: &IngestOptions,
) -> Result<(PriceHistory, IngestReport)> {
    let bytes = std::fs::read(path)?;
    parse_price_csv(&bytes, range, opts)
}

const EXPECTED_HEADER: [&str; 4] = ["date", "asset", "close_usd", "market_cap_usd"];

/// Parses raw CSV bytes into a [`PriceHistory`].
///
/// This is the untrusted-input entry point behind [`load_price_history`];
/// it never panics on malformed bytes.
pub fn parse_price_csv(
    bytes: &[u8],
    range: Option<(NaiveDate, NaiveDate)>,
    opts: &IngestOptions,
) -> Result<(PriceHistory, IngestReport)> {
    if let Some((from, to)) = range {
        if from > to {
            return Err(Error::Validation(format!(
                "date range start {from} is after end {to}"
            )));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if header.iter().collect::<Vec<_>>() != EXPECTED_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "header must be exactly `{}`, got `{}`",
                EXPECTED_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut report = IngestReport::default();
    // (asset, date) -> (close, mcap)
    let mut cells: BTreeMap<AssetId, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        report.rows_read += 1;
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            msg: format!("bad date `{}`: {e}", &record[0]),
        })?;
        let asset = AssetId::new(&record[1]).map_err(|_| Error::Parse {
            line,
            msg: "empty asset symbol".into(),
        })?;
        let close: f64 = record[2].parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad close_usd `{}`: {e}", &record[2]),
        })?;
        let mcap: f64 = record[3].parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad market_cap_usd `{}`: {e}", &record[3]),
        })?;
        if !close.is_finite() || close <= 0.0 {
            return Err(Error::Validation(format!(
                "line {line}: non-positive close {close} for {asset} on {date}"
            )));
        }
        if !mcap.is_finite() || mcap <= 0.0 {
            return Err(Error::Validation(format!(
                "line {line}: non-positive market cap {mcap} for {asset} on {date}"
            )));
        }
        if let Some((from, to)) = range {
            if date < from || date > to {
                report.rows_out_of_range += 1;
                continue;
            }
        }
        if cells.entry(asset.clone()).or_default().insert(date, (close, mcap)).is_some() {
            return Err(Error::Validation(format!(
                "line {line}: duplicate row for {asset} on {date}"
            )));
        }
    }

    if cells.is_empty() {
        return Err(Error::Data("no usable rows in requested range".into()));
    }

    let first = cells.values().flat_map(|m| m.keys()).min().copied().unwrap();
    let last = cells.values().flat_map(|m| m.keys()).max().copied().unwrap();
    if let Some((from, to)) = range {
        if first > from || last < to {
            return Err(Error::Data(format!(
                "requested range {from}..{to} not covered by data ({first}..{last})"
            )));
        }
    }
    let (start, end) = range.unwrap_or((first, last));
    let span = (end - start).num_days() + 1;
    if span > 40_000 {
        return Err(Error::Data(format!("calendar span of {span} days is beyond any supported history")));
    }
    if span * cells.len() as i64 > 10_000_000 {
        return Err(Error::Data("matrix too large: days x assets exceeds 10 million cells".into()));
    }

    let mut dates = Vec::new();
    let mut d = start;
    while d <= end {
        dates.push(d);
        d = d.succ_opt().expect("span checked above");
    }

    let assets: Vec<AssetId> = cells.keys().cloned().collect();
    let mut close = vec![vec![0.0; assets.len()]; dates.len()];
    let mut market_cap = vec![vec![0.0; assets.len()]; dates.len()];
    for (a, asset) in assets.iter().enumerate() {
        let series = &cells[asset];
        let mut prev: Option<(f64, f64)> = None;
        let mut gap_run = 0usize;
        for (t, date) in dates.iter().enumerate() {
            match series.get(date) {
                Some(&(c, m)) => {
                    close[t][a] = c;
                    market_cap[t][a] = m;
                    prev = Some((c, m));
                    gap_run = 0;
                }
                None => {
                    let Some((c, m)) = prev else {
                        return Err(Error::Data(format!(
                            "{asset} has no data at start of range ({date})"
                        )));
                    };
                    gap_run += 1;
                    if gap_run > opts.max_gap_days {
                        return Err(Error::Data(format!(
                            "{asset} gap of more than {} days ending {date}",
                            opts.max_gap_days
                        )));
                    }
                    close[t][a] = c;
                    market_cap[t][a] = m;
                    report.filled.push(FilledCell { date: *date, asset: asset.clone() });
                }
            }
        }
    }

    Ok((PriceHistory { assets, dates, close, market_cap }, report))
}

impl PriceHistory {
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn asset_index(&self, asset: &AssetId) -> Option<usize> {
        self.assets.binary_search(asset).ok()
    }

    /// Restricts the history to a subset of assets (kept in sorted order).
    pub fn select_assets(&self, keep: &[AssetId]) -> Result<PriceHistory> {
        let mut idx = Vec::with_capacity(keep.len());
        let mut assets = Vec::with_capacity(keep.len());
        let mut sorted: Vec<&AssetId> = keep.iter().collect();
        sorted.sort();
        sorted.dedup();
        for a in sorted {
            let i = self
                .asset_index(a)
                .ok_or_else(|| Error::Validation(format!("unknown asset {a}")))?;
            idx.push(i);
            assets.push(a.clone());
        }
        let pick = |m: &Vec<Vec<f64>>| m.iter().map(|row| idx.iter().map(|&i| row[i]).collect()).collect();
        Ok(PriceHistory {
            assets,
            dates: self.dates.clone(),
            close: pick(&self.close),
            market_cap: pick(&self.market_cap),
        })
    }
}

/// Daily log returns; one row fewer than the prices that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub assets: Vec<AssetId>,
    /// Date of each return (the later day of the pair).
    pub dates: Vec<NaiveDate>,
    /// `log_returns[row][asset]`.
    pub log_returns: Vec<Vec<f64>>,
}

/// `entry(t, i) = ln(close(t+1, i) / close(t, i))`.
pub fn log_returns(history: &PriceHistory) -> Result<ReturnSeries> {
    if history.n_days() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 dates to compute returns".into(),
        ));
    }
    let mut rows = Vec::with_capacity(history.n_days() - 1);
    for t in 1..history.n_days() {
        let row: Vec<f64> = (0..history.n_assets())
            .map(|a| (history.close[t][a] / history.close[t - 1][a]).ln())
            .collect();
        rows.push(row);
    }
    Ok(ReturnSeries {
        assets: history.assets.clone(),
        dates: history.dates[1..].to_vec(),
        log_returns: rows,
    })
}

/// Trailing-window annualized volatility per asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilitySeries {
    pub assets: Vec<AssetId>,
    /// Dates with a full window behind them.
    pub dates: Vec<NaiveDate>,
    /// `vols[row][asset]`, annualized.
    pub vols: Vec<Vec<f64>>,
    pub window_days: usize,
}

/// Sample standard deviation (n-1 denominator).
///
/// Exactly zero for a constant series, so downstream "identical returns
/// mean zero volatility" checks hold without tolerance.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 2, "sample_std needs at least 2 values");
    if values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Rolling sample standard deviation over trailing `window` values.
///
/// Output row `t` corresponds to input row `t + window - 1`.
pub fn rolling_sample_std(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::new();
    if values.len() < window || window < 2 {
        return out;
    }
    for t in (window - 1)..values.len() {
        out.push(sample_std(&values[t + 1 - window..=t]));
    }
    out
}

/// Annualized rolling volatility of daily log returns.
pub fn rolling_volatility(returns: &ReturnSeries, window_days: usize) -> Result<VolatilitySeries> {
    if window_days < 2 {
        return Err(Error::Validation(
            "volatility window must be at least 2 days".into(),
        ));
    }
    if returns.log_returns.len() < window_days {
        return Err(Error::InsufficientData(format!(
            "volatility window of {window_days} needs {window_days} returns, have {}",
            returns.log_returns.len()
        )));
    }
    let n_assets = returns.assets.len();
    let n_out = returns.log_returns.len() - window_days + 1;
    let mut vols = vec![vec![0.0; n_assets]; n_out];
    let ann = ANNUALIZATION_DAYS.sqrt();
    for a in 0..n_assets {
        let col: Vec<f64> = returns.log_returns.iter().map(|r| r[a]).collect();
        for (t, std) in rolling_sample_std(&col, window_days).into_iter().enumerate() {
            vols[t][a] = std * ann;
        }
    }
    Ok(VolatilitySeries {
        assets: returns.assets.clone(),
        dates: returns.dates[window_days - 1..].to_vec(),
        vols,
        window_days,
    })
}

/// Pairwise Pearson correlations over the full sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub assets: Vec<AssetId>,
    pub matrix: DMatrix<f64>,
}

/// Annualized covariance of daily log returns (sample covariance × 365).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub assets: Vec<AssetId>,
    pub matrix: DMatrix<f64>,
}

fn demeaned_columns(returns: &ReturnSeries) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = returns.log_returns.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 return rows for correlation/covariance".into(),
        ));
    }
    let cols: Vec<Vec<f64>> = (0..returns.assets.len())
        .map(|a| {
            let col: Vec<f64> = returns.log_returns.iter().map(|r| r[a]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            col.into_iter().map(|v| v - mean).collect()
        })
        .collect();
    Ok((cols, n))
}

pub fn covariance_matrix(returns: &ReturnSeries) -> Result<CovarianceMatrix> {
    let (cols, n) = demeaned_columns(returns)?;
    let k = cols.len();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let cov: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / (n - 1) as f64;
            let annual = cov * ANNUALIZATION_DAYS;
            m[(i, j)] = annual;
            m[(j, i)] = annual;
        }
    }
    Ok(CovarianceMatrix { assets: returns.assets.clone(), matrix: m })
}

pub fn correlation_matrix(returns: &ReturnSeries) -> Result<CorrelationMatrix> {
    let cov = covariance_matrix(returns)?;
    let k = cov.assets.len();
    for i in 0..k {
        if cov.matrix[(i, i)] <= 0.0 {
            return Err(Error::DegenerateAsset {
                asset: cov.assets[i].to_string(),
                msg: "zero return variance, correlation undefined".into(),
            });
        }
    }
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] = cov.matrix[(i, j)] / (cov.matrix[(i, i)] * cov.matrix[(j, j)]).sqrt();
        }
        m[(i, i)] = 1.0;
    }
    Ok(CorrelationMatrix { assets: cov.assets, matrix: m })
}

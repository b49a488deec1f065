//! The Concentration Risk Indicator and comparative performance reports.
//!
//! CRI extends the Herfindahl-Hirschman index with two crypto-specific
//! modifiers: a volatility penalty and a normalized market-cap-share
//! discount. Per asset the contribution is
//! `w^2 * (sigma / sigma_ref) / m`, where `m` is the asset's share of the
//! universe market cap, so concentrated, volatile, small-cap holdings score
//! high and a broad basket of calm large caps scores low. With neutral
//! modifiers the metric reduces to the plain HH index.

use crate::error::{Error, Result};
use crate::marketdata::{sample_std, AssetId, ANNUALIZATION_DAYS};
use crate::weights::sharpe_ratio;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One asset's inputs to the CRI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriAsset {
    pub asset: AssetId,
    /// Portfolio weight.
    pub weight: f64,
    pub market_cap_usd: f64,
    /// Annualized volatility.
    pub volatility: f64,
    /// Fraction of this asset's holding on each chain; `None` means a
    /// single chain (multiplier 1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_fractions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriInput {
    pub assets: Vec<CriAsset>,
    /// Total market cap of the comparison universe (>= sum of asset caps).
    pub universe_market_cap_usd: f64,
    /// Reference volatility; defaults to the market-cap-weighted average
    /// volatility of the inputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriContribution {
    pub asset: AssetId,
    pub market_share: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriReport {
    pub portfolio_cri: f64,
    pub sigma_ref: f64,
    pub contributions: Vec<CriContribution>,
}

/// Computes the concentration risk indicator.
pub fn cri(input: &CriInput) -> Result<CriReport> {
    if input.assets.is_empty() {
        return Err(Error::Validation("CRI needs at least one asset".into()));
    }
    let mut cap_sum = 0.0;
    for a in &input.assets {
        if !(a.market_cap_usd > 0.0) {
            return Err(Error::Validation(format!("{}: market cap must be positive", a.asset)));
        }
        if !(a.volatility > 0.0) {
            return Err(Error::Validation(format!("{}: volatility must be positive", a.asset)));
        }
        if let Some(fracs) = &a.chain_fractions {
            let s: f64 = fracs.iter().sum();
            if fracs.iter().any(|f| *f < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "{}: chain fractions must be non-negative and sum to 1",
                    a.asset
                )));
            }
        }
        cap_sum += a.market_cap_usd;
    }
    if !(input.universe_market_cap_usd > 0.0) || input.universe_market_cap_usd + 1e-6 < cap_sum {
        return Err(Error::Validation(
            "universe market cap must cover the portfolio's assets".into(),
        ));
    }
    let wsum: f64 = input.assets.iter().map(|a| a.weight).sum();
    if !((wsum - 1.0).abs() <= 1e-6) {
        return Err(Error::Validation(format!("weights sum to {wsum}, expected 1")));
    }
    let sigma_ref = match input.sigma_ref {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::Validation(format!("sigma_ref {s} must be positive"))),
        None => {
            input.assets.iter().map(|a| a.market_cap_usd * a.volatility).sum::<f64>() / cap_sum
        }
    };

    let mut contributions = Vec::with_capacity(input.assets.len());
    let mut total = 0.0;
    for a in &input.assets {
        let m = a.market_cap_usd / input.universe_market_cap_usd;
        let chain_mult = a
            .chain_fractions
            .as_ref()
            .map_or(1.0, |f| f.iter().map(|x| x * x).sum::<f64>());
        let contribution = a.weight * a.weight * (a.volatility / sigma_ref) / m * chain_mult;
        total += contribution;
        contributions.push(CriContribution { asset: a.asset.clone(), market_share: m, contribution });
    }
    Ok(CriReport { portfolio_cri: total, sigma_ref, contributions })
}

/// A named daily NAV (unit price) series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavSeries {
    pub entity: String,
    pub dates: Vec<NaiveDate>,
    pub nav: Vec<f64>,
}

/// One row of the performance report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub entity: String,
    pub interval_days: usize,
    pub total_return: f64,
    pub volatility: f64,
    pub sharpe: Option<f64>,
    pub cri: Option<f64>,
}

pub const REPORT_INTERVALS: [usize; 4] = [7, 30, 90, 365];

/// Trailing-interval returns, volatility and Sharpe for each entity, with
/// the entity's current CRI attached when inputs are supplied.
///
/// Intervals longer than the common series are skipped. All series must
/// share the same dates.
pub fn performance_report(
    series: &[NavSeries],
    cri_inputs: &BTreeMap<String, CriInput>,
    benchmark_rate: f64,
    intervals: &[usize],
) -> Result<Vec<PerfRow>> {
    let Some(first) = series.first() else {
        return Err(Error::Validation("no NAV series supplied".into()));
    };
    for s in series {
        if s.dates.len() != s.nav.len() {
            return Err(Error::Validation(format!("{}: dates/nav length mismatch", s.entity)));
        }
        if s.dates != first.dates {
            return Err(Error::Data(format!(
                "{}: date range not aligned with {}",
                s.entity, first.entity
            )));
        }
        if s.nav.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation(format!("{}: NAV values must be positive", s.entity)));
        }
    }
    let n = first.nav.len();
    let mut rows = Vec::new();
    for s in series {
        let entity_cri = match cri_inputs.get(&s.entity) {
            Some(input) => Some(cri(input)?.portfolio_cri),
            None => None,
        };
        for &k in intervals {
            if k + 1 > n {
                continue;
            }
            let window = &s.nav[n - 1 - k..];
            let total_return = window[k] / window[0] - 1.0;
            let rets: Vec<f64> = (1..=k).map(|i| (window[i] / window[i - 1]).ln()).collect();
            let (volatility, mean_annual) = if rets.len() >= 2 {
                (
                    sample_std(&rets) * ANNUALIZATION_DAYS.sqrt(),
                    rets.iter().sum::<f64>() / rets.len() as f64 * ANNUALIZATION_DAYS,
                )
            } else {
                (0.0, rets.first().copied().unwrap_or(0.0) * ANNUALIZATION_DAYS)
            };
            rows.push(PerfRow {
                entity: s.entity.clone(),
                interval_days: k,
                total_return,
                volatility,
                sharpe: sharpe_ratio(mean_annual, volatility, benchmark_rate),
                cri: entity_cri,
            });
        }
    }
    Ok(rows)
}

/// Parses a NAV file with header `date,entity,nav` into aligned series;
/// fuzz entry point.
pub fn parse_nav_csv(bytes: &[u8]) -> Result<Vec<NavSeries>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["date", "entity", "nav"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must be `date,entity,nav`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut by_entity: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::Parse { line, msg: format!("expected 3 fields, got {}", record.len()) });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| Error::Parse { line, msg: format!("bad date `{}`: {e}", &record[0]) })?;
        let nav: f64 = record[2]
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("bad nav `{}`: {e}", &record[2]) })?;
        if !(nav.is_finite() && nav > 0.0) {
            return Err(Error::Validation(format!("line {line}: nav must be positive")));
        }
        by_entity.entry(record[1].to_string()).or_default().push((date, nav));
    }
    if by_entity.is_empty() {
        return Err(Error::Data("no NAV rows".into()));
    }
    let mut out = Vec::new();
    for (entity, mut rows) in by_entity {
        rows.sort_by_key(|(d, _)| *d);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Validation(format!("{entity}: duplicate date {}", pair[0].0)));
            }
        }
        out.push(NavSeries {
            entity,
            dates: rows.iter().map(|(d, _)| *d).collect(),
            nav: rows.iter().map(|(_, v)| *v).collect(),
        });
    }
    Ok(out)
}

/// Renders rows as `entity,interval_days,total_return,volatility,sharpe,cri`.
pub fn perf_report_csv(rows: &[PerfRow]) -> String {
    let mut out = String::from("entity,interval_days,total_return,volatility,sharpe,cri\n");
    for r in rows {
        let sharpe = r.sharpe.map_or_else(|| "nan".into(), |v| format!("{v:.6}"));
        let cri = r.cri.map_or_else(String::new, |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{sharpe},{cri}\n",
            r.entity, r.interval_days, r.total_return, r.volatility
        ));
    }
    out
}

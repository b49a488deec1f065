//! Portfolio weighting engines and summary statistics.
//!
//! Four schemes over a common asset universe:
//! - `vvv_weights`: inverse weighting on VVV-adjusted volatility, where the
//!   adjustment adds the volatility-of-volatility (vvvFactor) to the plain
//!   rolling volatility so that weights pre-emptively shrink on assets whose
//!   risk level itself moves fast.
//! - `mvo_weights`: Markowitz tangency portfolio against a benchmark rate,
//!   shorts allowed.
//! - `mvo_no_short_weights`: Sharpe-maximizing long-only portfolio.
//! - `erc_weights`: equal risk contributions from each asset.

use crate::error::{Error, Result};
use crate::marketdata::{sample_std, AssetId, CovarianceMatrix, ReturnSeries, VolatilitySeries, ANNUALIZATION_DAYS};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Annualized benchmark rate the paper measures Sharpe against.
pub const DEFAULT_BENCHMARK_RATE: f64 = 0.10;

/// Normalized portfolio weights over an asset universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub assets: Vec<AssetId>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(assets: Vec<AssetId>, weights: Vec<f64>) -> Result<WeightVector> {
        if assets.len() != weights.len() {
            return Err(Error::Validation("weights/assets length mismatch".into()));
        }
        let sum: f64 = weights.iter().sum();
        // NaN-safe: the negated <= form rejects non-finite sums too
        if !((sum - 1.0).abs() <= 1e-9) {
            return Err(Error::Validation(format!("weights sum to {sum}, expected 1")));
        }
        Ok(WeightVector { assets, weights })
    }

    pub fn get(&self, asset: &AssetId) -> Option<f64> {
        self.assets.iter().position(|a| a == asset).map(|i| self.weights[i])
    }
}

/// Per-asset volatility, vvvFactor and their sum (VVV-Adj-Volatility).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityProfile {
    pub assets: Vec<AssetId>,
    /// Annualized trailing volatility at the profile date.
    pub volatility: Vec<f64>,
    /// Sample std of the trailing window of the volatility series.
    pub vvv_factor: Vec<f64>,
    /// `volatility + vvv_factor`, elementwise.
    pub adjusted: Vec<f64>,
}

/// Profile at the last date of the volatility series.
pub fn vvv_profile(vol: &VolatilitySeries, window_days: usize) -> Result<VolatilityProfile> {
    if vol.vols.is_empty() {
        return Err(Error::InsufficientData("empty volatility series".into()));
    }
    vvv_profile_at(vol, window_days, vol.vols.len() - 1)
}

/// Profile at `row` of the volatility series; the vvvFactor window is the
/// trailing `window_days` rows ending at `row`.
pub fn vvv_profile_at(
    vol: &VolatilitySeries,
    window_days: usize,
    row: usize,
) -> Result<VolatilityProfile> {
    if window_days < 2 {
        return Err(Error::Validation("vvv window must be at least 2 days".into()));
    }
    if row + 1 < window_days || row >= vol.vols.len() {
        return Err(Error::InsufficientData(format!(
            "vvvFactor window of {window_days} needs {window_days} volatility points per asset, have {}",
            row + 1
        )));
    }
    let n = vol.assets.len();
    let mut volatility = Vec::with_capacity(n);
    let mut vvv_factor = Vec::with_capacity(n);
    let mut adjusted = Vec::with_capacity(n);
    for a in 0..n {
        let window: Vec<f64> = (row + 1 - window_days..=row).map(|t| vol.vols[t][a]).collect();
        let v = vol.vols[row][a];
        let f = sample_std(&window);
        volatility.push(v);
        vvv_factor.push(f);
        adjusted.push(v + f);
    }
    Ok(VolatilityProfile { assets: vol.assets.clone(), volatility, vvv_factor, adjusted })
}

/// Weights inversely proportional to VVV-adjusted volatility.
pub fn vvv_weights(profile: &VolatilityProfile) -> Result<WeightVector> {
    for (a, &adj) in profile.assets.iter().zip(&profile.adjusted) {
        if adj <= 0.0 {
            return Err(Error::DegenerateAsset {
                asset: a.to_string(),
                msg: format!("adjusted volatility {adj} must be positive for inverse weighting"),
            });
        }
    }
    let inv: Vec<f64> = profile.adjusted.iter().map(|v| 1.0 / v).collect();
    let total: f64 = inv.iter().sum();
    WeightVector::new(profile.assets.clone(), inv.into_iter().map(|v| v / total).collect())
}

/// Per-asset annualized expected returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedReturns {
    pub assets: Vec<AssetId>,
    pub mu: Vec<f64>,
}

/// Annualized mean daily log return over the sample.
pub fn expected_returns(returns: &ReturnSeries) -> Result<ExpectedReturns> {
    let n = returns.log_returns.len();
    if n == 0 {
        return Err(Error::InsufficientData("no return rows".into()));
    }
    let mu = (0..returns.assets.len())
        .map(|a| {
            returns.log_returns.iter().map(|r| r[a]).sum::<f64>() / n as f64 * ANNUALIZATION_DAYS
        })
        .collect();
    Ok(ExpectedReturns { assets: returns.assets.clone(), mu })
}

/// Condition-number bound above which the covariance is treated as singular.
pub const DEFAULT_CONDITION_BOUND: f64 = 1e12;

fn check_alignment(a: &[AssetId], b: &[AssetId]) -> Result<()> {
    if a != b {
        return Err(Error::Validation("asset universes do not match".into()));
    }
    Ok(())
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Tangency (maximum-Sharpe) portfolio against `benchmark_rate`; shorts allowed.
///
/// `w` is `cov^-1 (mu - benchmark)` normalized to sum to one.
pub fn mvo_weights(
    mu: &ExpectedReturns,
    cov: &CovarianceMatrix,
    benchmark_rate: f64,
) -> Result<WeightVector> {
    check_alignment(&mu.assets, &cov.assets)?;
    let n = mu.mu.len();
    let cond = condition_number(&cov.matrix);
    if cond > DEFAULT_CONDITION_BOUND {
        return Err(Error::Conditioning { cond, bound: DEFAULT_CONDITION_BOUND });
    }
    let excess = DVector::from_iterator(n, mu.mu.iter().map(|m| m - benchmark_rate));
    let lu = cov.matrix.clone().lu();
    let x = lu
        .solve(&excess)
        .ok_or(Error::Conditioning { cond: f64::INFINITY, bound: DEFAULT_CONDITION_BOUND })?;
    let s: f64 = x.iter().sum();
    if s.abs() < 1e-12 * x.norm().max(1e-300) {
        return Err(Error::DegenerateFrontier(
            "tangency weights sum to zero; frontier undefined at this benchmark".into(),
        ));
    }
    WeightVector::new(mu.assets.clone(), x.iter().map(|v| v / s).collect())
}

/// Result of the long-only Sharpe maximizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoShortWeights {
    pub weights: WeightVector,
    /// True when every excess return was non-positive and the minimum-variance
    /// long-only portfolio was returned instead.
    pub min_variance_fallback: bool,
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn quad_form(cov: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += w[i] * cov[(i, j)] * w[j];
        }
    }
    q
}

fn sharpe_of(ex: &[f64], cov: &DMatrix<f64>, w: &[f64]) -> f64 {
    let e: f64 = ex.iter().zip(w).map(|(a, b)| a * b).sum();
    let q = quad_form(cov, w);
    if q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    e / q.sqrt()
}

fn pga_max_sharpe(ex: &[f64], cov: &DMatrix<f64>, start: Vec<f64>, iters: usize) -> Vec<f64> {
    let n = ex.len();
    let mut w = start;
    let mut best = w.clone();
    let mut best_s = sharpe_of(ex, cov, &w);
    for t in 1..=iters {
        let q = quad_form(cov, &w);
        if q <= 0.0 {
            break;
        }
        let sigma = q.sqrt();
        let e: f64 = ex.iter().zip(&w).map(|(a, b)| a * b).sum();
        let mut cw = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                cw[i] += cov[(i, j)] * w[j];
            }
        }
        let step = 0.25 / (t as f64).sqrt();
        let next: Vec<f64> = (0..n)
            .map(|i| w[i] + step * (ex[i] / sigma - e * cw[i] / (sigma * q)))
            .collect();
        w = project_simplex(&next);
        let s = sharpe_of(ex, cov, &w);
        if s > best_s {
            best_s = s;
            best = w.clone();
        }
    }
    best
}

/// Exact tangency solve restricted to the support found by the gradient
/// ascent; accepted only when the KKT conditions hold for the full problem.
fn face_polish(ex: &[f64], cov: &DMatrix<f64>, w: &[f64]) -> Option<Vec<f64>> {
    let n = ex.len();
    let support: Vec<usize> = (0..n).filter(|&i| w[i] > 1e-9).collect();
    if support.is_empty() {
        return None;
    }
    let k = support.len();
    let sub_cov = DMatrix::from_fn(k, k, |i, j| cov[(support[i], support[j])]);
    let sub_ex = DVector::from_iterator(k, support.iter().map(|&i| ex[i]));
    let y = sub_cov.clone().lu().solve(&sub_ex)?;
    if y.iter().any(|&v| v < 0.0) {
        return None;
    }
    // KKT for excluded assets: ex_i <= (C y)_i
    let mut full_y = vec![0.0; n];
    for (si, &i) in support.iter().enumerate() {
        full_y[i] = y[si];
    }
    for i in 0..n {
        if full_y[i] == 0.0 {
            let cyi: f64 = (0..n).map(|j| cov[(i, j)] * full_y[j]).sum();
            if ex[i] > cyi + 1e-12 {
                return None;
            }
        }
    }
    let s: f64 = full_y.iter().sum();
    if s <= 0.0 {
        return None;
    }
    Some(full_y.into_iter().map(|v| v / s).collect())
}

fn min_variance_long_only(cov: &DMatrix<f64>, n: usize) -> Vec<f64> {
    // projected gradient descent on w'Cw; Lipschitz step from a row-sum bound
    let mut w = vec![1.0 / n as f64; n];
    let l: f64 = (0..n)
        .map(|i| (0..n).map(|j| cov[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / (2.0 * l);
    for _ in 0..20_000 {
        let mut grad = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                grad[i] += 2.0 * cov[(i, j)] * w[j];
            }
        }
        let next: Vec<f64> = (0..n).map(|i| w[i] - step * grad[i]).collect();
        let next = project_simplex(&next);
        let delta: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if delta < 1e-14 {
            break;
        }
    }
    w
}

/// Sharpe-maximizing long-only portfolio via projected-gradient ascent over
/// the simplex, refined by an exact solve on the detected support.
pub fn mvo_no_short_weights(
    mu: &ExpectedReturns,
    cov: &CovarianceMatrix,
    benchmark_rate: f64,
) -> Result<NoShortWeights> {
    check_alignment(&mu.assets, &cov.assets)?;
    let n = mu.mu.len();
    let cond = condition_number(&cov.matrix);
    if cond > DEFAULT_CONDITION_BOUND {
        return Err(Error::Conditioning { cond, bound: DEFAULT_CONDITION_BOUND });
    }
    let ex: Vec<f64> = mu.mu.iter().map(|m| m - benchmark_rate).collect();

    // On the simplex the excess return is at most max(ex); if that is not
    // positive no portfolio beats the benchmark and Sharpe maximization is
    // vacuous.
    if ex.iter().all(|&e| e <= 0.0) {
        let w = min_variance_long_only(&cov.matrix, n);
        return Ok(NoShortWeights {
            weights: WeightVector::new(mu.assets.clone(), normalize(w))?,
            min_variance_fallback: true,
        });
    }

    let mut starts: Vec<Vec<f64>> = vec![vec![1.0 / n as f64; n]];
    let inv_var: Vec<f64> = (0..n).map(|i| 1.0 / cov.matrix[(i, i)].max(1e-12)).collect();
    starts.push(normalize(inv_var));
    // best single positive-excess vertex, lowest index on ties
    let mut vi = 0;
    let mut vs = f64::NEG_INFINITY;
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        let s = sharpe_of(&ex, &cov.matrix, &v);
        if s > vs {
            vs = s;
            vi = i;
        }
    }
    let mut vertex = vec![0.0; n];
    vertex[vi] = 1.0;
    starts.push(vertex);

    let mut best: Option<Vec<f64>> = None;
    let mut best_s = f64::NEG_INFINITY;
    for start in starts {
        let w = pga_max_sharpe(&ex, &cov.matrix, start, 20_000);
        let w = match face_polish(&ex, &cov.matrix, &w) {
            Some(p) if sharpe_of(&ex, &cov.matrix, &p) >= sharpe_of(&ex, &cov.matrix, &w) => p,
            _ => w,
        };
        let s = sharpe_of(&ex, &cov.matrix, &w);
        if s > best_s {
            best_s = s;
            best = Some(w);
        }
    }
    let w = normalize(best.expect("at least one start"));
    Ok(NoShortWeights {
        weights: WeightVector::new(mu.assets.clone(), w)?,
        min_variance_fallback: false,
    })
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Equal-risk-contribution weights via cyclical coordinate fixed-point
/// iteration, tolerance 1e-10 on weight change, at most `ERC_MAX_SWEEPS`
/// sweeps.
pub const ERC_MAX_SWEEPS: usize = 10_000;

pub fn erc_weights(cov: &CovarianceMatrix) -> Result<WeightVector> {
    let n = cov.assets.len();
    if n == 0 {
        return Err(Error::Validation("empty covariance".into()));
    }
    if cov.matrix.clone().cholesky().is_none() {
        return Err(Error::Validation(
            "covariance must be positive definite for ERC".into(),
        ));
    }
    let c = &cov.matrix;
    let mut w = vec![1.0 / n as f64; n];
    let mut converged = false;
    for _ in 0..ERC_MAX_SWEEPS {
        let prev = w.clone();
        for i in 0..n {
            let b: f64 = (0..n).filter(|&j| j != i).map(|j| c[(i, j)] * w[j]).sum();
            let lam = quad_form(c, &w) / n as f64;
            let cii = c[(i, i)];
            w[i] = (-b + (b * b + 4.0 * cii * lam).sqrt()) / (2.0 * cii);
        }
        w = normalize(w);
        let delta = w.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if delta < 1e-10 {
            converged = true;
            break;
        }
    }
    let rc = risk_contributions(c, &w);
    let residual = rc
        .iter()
        .map(|&r| (r - 1.0 / n as f64).abs())
        .fold(0.0, f64::max);
    if !converged || residual > 1e-8 {
        return Err(Error::Convergence(format!(
            "ERC residual {residual:.3e} after {ERC_MAX_SWEEPS} sweeps"
        )));
    }
    WeightVector::new(cov.assets.clone(), w)
}

/// Fraction of total portfolio variance contributed by each asset.
pub fn risk_contributions(cov: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let total = quad_form(cov, w);
    (0..n)
        .map(|i| {
            let cwi: f64 = (0..n).map(|j| cov[(i, j)] * w[j]).sum();
            w[i] * cwi / total
        })
        .collect()
}

/// Annualized portfolio summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioStats {
    pub expected_return: f64,
    pub volatility: f64,
    /// `None` when volatility is zero and the ratio is undefined.
    pub sharpe: Option<f64>,
    pub benchmark_rate: f64,
}

pub fn portfolio_stats(
    weights: &WeightVector,
    mu: &ExpectedReturns,
    cov: &CovarianceMatrix,
    benchmark_rate: f64,
) -> Result<PortfolioStats> {
    check_alignment(&weights.assets, &mu.assets)?;
    check_alignment(&weights.assets, &cov.assets)?;
    let expected_return: f64 = weights.weights.iter().zip(&mu.mu).map(|(w, m)| w * m).sum();
    let volatility = quad_form(&cov.matrix, &weights.weights).max(0.0).sqrt();
    Ok(PortfolioStats {
        expected_return,
        volatility,
        sharpe: sharpe_ratio(expected_return, volatility, benchmark_rate),
        benchmark_rate,
    })
}

/// `(expected_return - benchmark) / volatility`, undefined at zero volatility.
pub fn sharpe_ratio(expected_return: f64, volatility: f64, benchmark_rate: f64) -> Option<f64> {
    if volatility > 0.0 {
        Some((expected_return - benchmark_rate) / volatility)
    } else {
        None
    }
}

/// One asset row of the weights comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReportRow {
    pub asset: AssetId,
    pub volatility: f64,
    pub vvv_factor: f64,
    pub vvv_adj_volatility: f64,
    pub vvv_weight: f64,
    pub mvo_weight: f64,
    pub no_short_weight: f64,
}

/// The weights comparison table: per-asset rows plus per-scheme portfolio
/// statistics as trailer rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub rows: Vec<WeightReportRow>,
    pub vvv_stats: PortfolioStats,
    pub mvo_stats: PortfolioStats,
    pub no_short_stats: PortfolioStats,
}

/// Runs all three weighting engines and assembles the comparison report.
pub fn build_weight_report(
    profile: &VolatilityProfile,
    mu: &ExpectedReturns,
    cov: &CovarianceMatrix,
    benchmark_rate: f64,
) -> Result<WeightReport> {
    let vvv = vvv_weights(profile)?;
    let mvo = mvo_weights(mu, cov, benchmark_rate)?;
    let no_short = mvo_no_short_weights(mu, cov, benchmark_rate)?.weights;
    let rows = profile
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| WeightReportRow {
            asset: a.clone(),
            volatility: profile.volatility[i],
            vvv_factor: profile.vvv_factor[i],
            vvv_adj_volatility: profile.adjusted[i],
            vvv_weight: vvv.weights[i],
            mvo_weight: mvo.weights[i],
            no_short_weight: no_short.weights[i],
        })
        .collect();
    Ok(WeightReport {
        rows,
        vvv_stats: portfolio_stats(&vvv, mu, cov, benchmark_rate)?,
        mvo_stats: portfolio_stats(&mvo, mu, cov, benchmark_rate)?,
        no_short_stats: portfolio_stats(&no_short, mu, cov, benchmark_rate)?,
    })
}

fn fmt_sharpe(s: Option<f64>) -> String {
    s.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

/// Renders the report as CSV with the three per-scheme trailer rows.
pub fn weight_report_csv(report: &WeightReport) -> String {
    let mut out = String::from(
        "asset,volatility,vvv_factor,vvv_adj_volatility,vvv_weight,mvo_weight,no_short_weight\n",
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.asset,
            r.volatility,
            r.vvv_factor,
            r.vvv_adj_volatility,
            r.vvv_weight,
            r.mvo_weight,
            r.no_short_weight
        ));
    }
    out.push_str(&format!(
        "portfolio_expected_return,,,,{:.6},{:.6},{:.6}\n",
        report.vvv_stats.expected_return,
        report.mvo_stats.expected_return,
        report.no_short_stats.expected_return
    ));
    out.push_str(&format!(
        "portfolio_volatility,,,,{:.6},{:.6},{:.6}\n",
        report.vvv_stats.volatility, report.mvo_stats.volatility, report.no_short_stats.volatility
    ));
    out.push_str(&format!(
        "sharpe_ratio,,,,{},{},{}\n",
        fmt_sharpe(report.vvv_stats.sharpe),
        fmt_sharpe(report.mvo_stats.sharpe),
        fmt_sharpe(report.no_short_stats.sharpe)
    ));
    out
}

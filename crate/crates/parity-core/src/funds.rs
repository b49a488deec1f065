//! Alpha/Beta/Gamma sub-fund construction, the parity line, investor
//! preference mapping, and fund NAV accounting.
//!
//! Gamma takes the assets that move against the rest of the universe (or the
//! single calmest asset when none do), Alpha the riskiest tier of what
//! remains, Beta the rest. Sweeping mixes of the three sub-funds and keeping
//! the Pareto-efficient ones yields the parity line, from which an investor
//! preference (a risk target, a return target, or explicit mix weights)
//! picks an allocation.

use crate::error::{Error, Result};
use crate::marketdata::{AssetId, ReturnSeries};
use crate::money::Cents;
use crate::weights::WeightVector;
use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubFundLabel {
    Alpha,
    Beta,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubFundWeighting {
    Vvv,
    Erc,
}

/// Classification input for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetClassStats {
    pub asset: AssetId,
    pub adjusted_volatility: f64,
    pub expected_return: f64,
    /// Correlation of the asset's returns with the universe index.
    pub index_correlation: f64,
}

/// Disjoint sub-fund memberships covering the universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubFundMembers {
    pub alpha: Vec<AssetId>,
    pub beta: Vec<AssetId>,
    pub gamma: Vec<AssetId>,
}

pub const DEFAULT_GAMMA_CORR_MAX: f64 = 0.0;

/// Splits the universe into the three mandates.
///
/// Gamma: assets with index correlation below `gamma_corr_max`, or the single
/// lowest-adjusted-volatility asset when none qualify. The remaining assets
/// split at a universe-sized tercile: the `ceil(N/3)` most volatile go to
/// Alpha (capped so Beta keeps at least one), the rest to Beta.
pub fn classify_assets(
    stats: &[AssetClassStats],
    gamma_corr_max: f64,
) -> Result<SubFundMembers> {
    let n = stats.len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "classification needs at least 3 assets, have {n}"
        )));
    }
    let by_symbol = |a: &AssetClassStats, b: &AssetClassStats| a.asset.cmp(&b.asset);

    let mut gamma: Vec<&AssetClassStats> =
        stats.iter().filter(|s| s.index_correlation < gamma_corr_max).collect();
    if gamma.is_empty() {
        // fallback: the calmest asset stands in for a risk-free leg
        let calmest = stats
            .iter()
            .min_by(|a, b| {
                a.adjusted_volatility
                    .partial_cmp(&b.adjusted_volatility)
                    .unwrap()
                    .then(a.asset.cmp(&b.asset))
            })
            .expect("non-empty");
        gamma.push(calmest);
    }
    if gamma.len() > n - 2 {
        gamma.sort_by(|a, b| {
            a.index_correlation.partial_cmp(&b.index_correlation).unwrap().then(by_symbol(a, b))
        });
        gamma.truncate(n - 2);
    }
    let gamma_ids: Vec<AssetId> = {
        let mut ids: Vec<AssetId> = gamma.iter().map(|s| s.asset.clone()).collect();
        ids.sort();
        ids
    };

    let mut rest: Vec<&AssetClassStats> =
        stats.iter().filter(|s| !gamma_ids.contains(&s.asset)).collect();
    rest.sort_by(|a, b| {
        b.adjusted_volatility.partial_cmp(&a.adjusted_volatility).unwrap().then(by_symbol(a, b))
    });
    let alpha_count = n.div_ceil(3).min(rest.len() - 1).max(1);
    let mut alpha: Vec<AssetId> = rest[..alpha_count].iter().map(|s| s.asset.clone()).collect();
    let mut beta: Vec<AssetId> = rest[alpha_count..].iter().map(|s| s.asset.clone()).collect();
    alpha.sort();
    beta.sort();
    Ok(SubFundMembers { alpha, beta, gamma: gamma_ids })
}

/// Correlation of each asset's daily returns with the weighted universe
/// index return.
pub fn index_correlations(returns: &ReturnSeries, index_weights: &WeightVector) -> Result<Vec<f64>> {
    if returns.assets != index_weights.assets {
        return Err(Error::Validation("universe mismatch for index correlation".into()));
    }
    let n = returns.log_returns.len();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 return rows".into()));
    }
    let index: Vec<f64> = returns
        .log_returns
        .iter()
        .map(|row| row.iter().zip(&index_weights.weights).map(|(r, w)| r * w).sum())
        .collect();
    let mean_idx = index.iter().sum::<f64>() / n as f64;
    let var_idx: f64 = index.iter().map(|v| (v - mean_idx) * (v - mean_idx)).sum::<f64>();
    let mut out = Vec::with_capacity(returns.assets.len());
    for a in 0..returns.assets.len() {
        let col: Vec<f64> = returns.log_returns.iter().map(|r| r[a]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        let cov: f64 =
            col.iter().zip(&index).map(|(x, y)| (x - mean) * (y - mean_idx)).sum::<f64>();
        if var <= 0.0 || var_idx <= 0.0 {
            out.push(0.0);
        } else {
            out.push(cov / (var * var_idx).sqrt());
        }
    }
    Ok(out)
}

/// A point of the parity line: an ABG mix with its risk/return coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityPoint {
    /// Mix weights over (Alpha, Beta, Gamma).
    pub abg: [f64; 3],
    pub expected_return: f64,
    pub volatility: f64,
}

/// The Pareto-efficient set of ABG mixes, sorted by volatility ascending
/// with strictly increasing expected return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityLine {
    pub points: Vec<ParityPoint>,
}

pub const DEFAULT_PARITY_GRID_STEP: f64 = 0.01;

/// Sweeps ABG mixes on a simplex grid and keeps the Pareto frontier.
///
/// `mu` holds the three sub-funds' expected returns and `cov` their 3x3
/// covariance (annualized).
pub fn build_parity_line(mu: &[f64; 3], cov: &DMatrix<f64>, step: f64) -> Result<ParityLine> {
    if cov.nrows() != 3 || cov.ncols() != 3 {
        return Err(Error::Validation("parity line needs a 3x3 sub-fund covariance".into()));
    }
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::Validation(format!("grid step {step} out of range")));
    }
    let divisions = (1.0 / step).round() as usize;
    let mut candidates: Vec<ParityPoint> = Vec::new();
    for i in 0..=divisions {
        for j in 0..=(divisions - i) {
            let k = divisions - i - j;
            let abg = [
                i as f64 / divisions as f64,
                j as f64 / divisions as f64,
                k as f64 / divisions as f64,
            ];
            let er: f64 = abg.iter().zip(mu).map(|(l, m)| l * m).sum();
            let mut var = 0.0;
            for (r, lr) in abg.iter().enumerate() {
                for (c, lc) in abg.iter().enumerate() {
                    var += lr * lc * cov[(r, c)];
                }
            }
            candidates.push(ParityPoint { abg, expected_return: er, volatility: var.max(0.0).sqrt() });
        }
    }
    // Pareto sweep: volatility ascending, return descending on ties; a point
    // survives only if it improves the best return so far beyond float noise
    candidates.sort_by(|a, b| {
        a.volatility
            .partial_cmp(&b.volatility)
            .unwrap()
            .then(b.expected_return.partial_cmp(&a.expected_return).unwrap())
            .then(a.abg[0].partial_cmp(&b.abg[0]).unwrap())
            .then(a.abg[1].partial_cmp(&b.abg[1]).unwrap())
    });
    let mut points: Vec<ParityPoint> = Vec::new();
    let mut best_return = f64::NEG_INFINITY;
    for p in candidates {
        if p.expected_return > best_return + 1e-12 {
            best_return = p.expected_return;
            points.push(p);
        }
    }
    Ok(ParityLine { points })
}

impl ParityLine {
    pub fn min_volatility(&self) -> Option<&ParityPoint> {
        self.points.first()
    }

    pub fn max_volatility(&self) -> Option<&ParityPoint> {
        self.points.last()
    }
}

/// How an investor expresses a preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum PreferenceMode {
    /// Target portfolio volatility.
    RiskTarget(f64),
    /// Target expected return.
    ReturnTarget(f64),
    /// Explicit (Alpha, Beta, Gamma) mix.
    ExplicitWeights([f64; 3]),
    /// Novice default: the lowest-risk point of the line.
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestorPreference {
    pub investor_id: String,
    #[serde(flatten)]
    pub mode: PreferenceMode,
}

/// Resolved allocation; `clamped` flags a target outside the attainable
/// range that was moved to the nearest endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub abg: [f64; 3],
    pub expected_return: f64,
    pub volatility: f64,
    pub clamped: bool,
}

fn interpolate(line: &[ParityPoint], target: f64, key: impl Fn(&ParityPoint) -> f64) -> Allocation {
    let first = line.first().expect("non-empty line");
    let last = line.last().expect("non-empty line");
    if target <= key(first) {
        return Allocation {
            abg: first.abg,
            expected_return: first.expected_return,
            volatility: first.volatility,
            clamped: target < key(first),
        };
    }
    if target >= key(last) {
        return Allocation {
            abg: last.abg,
            expected_return: last.expected_return,
            volatility: last.volatility,
            clamped: target > key(last),
        };
    }
    let hi = line.partition_point(|p| key(p) < target);
    let (a, b) = (&line[hi - 1], &line[hi]);
    let span = key(b) - key(a);
    let t = if span > 0.0 { (target - key(a)) / span } else { 0.0 };
    let mut abg = [0.0; 3];
    for i in 0..3 {
        abg[i] = a.abg[i] * (1.0 - t) + b.abg[i] * t;
    }
    let total: f64 = abg.iter().sum();
    abg.iter_mut().for_each(|v| *v /= total);
    Allocation {
        abg,
        expected_return: a.expected_return * (1.0 - t) + b.expected_return * t,
        volatility: a.volatility * (1.0 - t) + b.volatility * t,
        clamped: false,
    }
}

/// Maps a preference to an ABG allocation on (or between) parity-line points.
pub fn allocation_from_preference(
    pref: &InvestorPreference,
    line: &ParityLine,
) -> Result<Allocation> {
    if line.points.is_empty() {
        return Err(Error::Validation("parity line is empty".into()));
    }
    match &pref.mode {
        PreferenceMode::RiskTarget(v) => Ok(interpolate(&line.points, *v, |p| p.volatility)),
        PreferenceMode::ReturnTarget(r) => {
            Ok(interpolate(&line.points, *r, |p| p.expected_return))
        }
        PreferenceMode::ExplicitWeights(w) => {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || w.iter().any(|x| *x < 0.0 || *x > 1.0) {
                return Err(Error::Validation(format!(
                    "explicit weights {w:?} must lie in [0,1] and sum to 1"
                )));
            }
            Ok(Allocation { abg: *w, expected_return: f64::NAN, volatility: f64::NAN, clamped: false })
        }
        PreferenceMode::Default => {
            let p = line.min_volatility().expect("non-empty");
            Ok(Allocation {
                abg: p.abg,
                expected_return: p.expected_return,
                volatility: p.volatility,
                clamped: false,
            })
        }
    }
}

/// A preference-ledger record (the stand-in for the paper's NFT persistence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub investor_id: String,
    #[serde(flatten)]
    pub mode: PreferenceMode,
    pub abg_weights: [f64; 3],
    pub timestamp: NaiveDate,
}

pub fn preference_ledger_to_jsonl(records: &[PreferenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses the append-only preference ledger; fuzz entry point.
pub fn parse_preference_ledger(bytes: &[u8]) -> Result<Vec<PreferenceRecord>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not utf-8: {e}") })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PreferenceRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        records.push(r);
    }
    Ok(records)
}

/// One sub-fund with its internal weights and summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubFundSpec {
    pub label: SubFundLabel,
    pub members: Vec<AssetId>,
    pub weighting: SubFundWeighting,
    pub weights: WeightVector,
    pub stats: crate::weights::PortfolioStats,
}

/// Classification, per-sub-fund construction and the parity line in one
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubFundReport {
    pub subfunds: [SubFundSpec; 3],
    pub parity_line: ParityLine,
}

/// Builds the full Alpha/Beta/Gamma report from return history.
///
/// Alpha and Beta weight members by inverse adjusted volatility, Gamma by
/// equal risk contribution (falling back to inverse volatility when its
/// covariance is not positive definite). Sub-fund statistics come from the
/// weighted member return series; the parity line sweeps their mixes.
pub fn build_subfund_report(
    returns: &ReturnSeries,
    profile: &crate::weights::VolatilityProfile,
    benchmark_rate: f64,
    grid_step: f64,
    gamma_corr_max: f64,
) -> Result<SubFundReport> {
    use crate::marketdata::{sample_std, ANNUALIZATION_DAYS};
    use crate::weights::{erc_weights, sharpe_ratio, vvv_weights, PortfolioStats, VolatilityProfile};

    if returns.assets != profile.assets {
        return Err(Error::Validation("returns and profile universes differ".into()));
    }
    let index_w = vvv_weights(profile)?;
    let corrs = index_correlations(returns, &index_w)?;
    let mu_all = crate::weights::expected_returns(returns)?;
    let stats_rows: Vec<AssetClassStats> = returns
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| AssetClassStats {
            asset: a.clone(),
            adjusted_volatility: profile.adjusted[i],
            expected_return: mu_all.mu[i],
            index_correlation: corrs[i],
        })
        .collect();
    let members = classify_assets(&stats_rows, gamma_corr_max)?;

    let index_of = |a: &AssetId| returns.assets.iter().position(|x| x == a).expect("member exists");
    let build_one = |label: SubFundLabel, ids: &[AssetId]| -> Result<(SubFundSpec, Vec<f64>)> {
        let idx: Vec<usize> = ids.iter().map(index_of).collect();
        let sub_profile = VolatilityProfile {
            assets: ids.to_vec(),
            volatility: idx.iter().map(|&i| profile.volatility[i]).collect(),
            vvv_factor: idx.iter().map(|&i| profile.vvv_factor[i]).collect(),
            adjusted: idx.iter().map(|&i| profile.adjusted[i]).collect(),
        };
        let sub_returns = ReturnSeries {
            assets: ids.to_vec(),
            dates: returns.dates.clone(),
            log_returns: returns
                .log_returns
                .iter()
                .map(|row| idx.iter().map(|&i| row[i]).collect())
                .collect(),
        };
        let (weighting, weights) = match label {
            SubFundLabel::Gamma => match crate::marketdata::covariance_matrix(&sub_returns)
                .and_then(|cov| erc_weights(&cov))
            {
                Ok(w) => (SubFundWeighting::Erc, w),
                Err(_) => (SubFundWeighting::Vvv, vvv_weights(&sub_profile)?),
            },
            _ => (SubFundWeighting::Vvv, vvv_weights(&sub_profile)?),
        };
        // weighted member returns give the sub-fund's daily series
        let series: Vec<f64> = sub_returns
            .log_returns
            .iter()
            .map(|row| row.iter().zip(&weights.weights).map(|(r, w)| r * w).sum())
            .collect();
        let expected_return =
            series.iter().sum::<f64>() / series.len() as f64 * ANNUALIZATION_DAYS;
        let volatility = if series.len() >= 2 {
            sample_std(&series) * ANNUALIZATION_DAYS.sqrt()
        } else {
            0.0
        };
        let stats = PortfolioStats {
            expected_return,
            volatility,
            sharpe: sharpe_ratio(expected_return, volatility, benchmark_rate),
            benchmark_rate,
        };
        Ok((SubFundSpec { label, members: ids.to_vec(), weighting, weights, stats }, series))
    };

    let (alpha, sa) = build_one(SubFundLabel::Alpha, &members.alpha)?;
    let (beta, sb) = build_one(SubFundLabel::Beta, &members.beta)?;
    let (gamma, sg) = build_one(SubFundLabel::Gamma, &members.gamma)?;

    let series = [sa, sb, sg];
    let n = series[0].len();
    let means: Vec<f64> = series.iter().map(|s| s.iter().sum::<f64>() / n as f64).collect();
    let mut cov3 = DMatrix::zeros(3, 3);
    if n >= 2 {
        for i in 0..3 {
            for j in 0..3 {
                let c: f64 = series[i]
                    .iter()
                    .zip(&series[j])
                    .map(|(x, y)| (x - means[i]) * (y - means[j]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                cov3[(i, j)] = c * crate::marketdata::ANNUALIZATION_DAYS;
            }
        }
    }
    let mu3 = [alpha.stats.expected_return, beta.stats.expected_return, gamma.stats.expected_return];
    let parity_line = build_parity_line(&mu3, &cov3, grid_step)?;
    Ok(SubFundReport { subfunds: [alpha, beta, gamma], parity_line })
}

/// Token-accounted fund state: unit price is TVL over supply, deposits mint
/// at the current price and redemptions burn symmetrically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundAccount {
    pub label: String,
    /// Asset units held.
    pub holdings: BTreeMap<AssetId, f64>,
    pub token_supply: f64,
    pub investor_balances: BTreeMap<String, f64>,
}

impl FundAccount {
    pub fn new(label: &str) -> FundAccount {
        FundAccount {
            label: label.to_string(),
            holdings: BTreeMap::new(),
            token_supply: 0.0,
            investor_balances: BTreeMap::new(),
        }
    }

    pub fn tvl(&self, prices: &BTreeMap<AssetId, f64>) -> Result<Cents> {
        let mut total = Cents::ZERO;
        for (asset, units) in &self.holdings {
            let price = prices
                .get(asset)
                .ok_or_else(|| Error::Validation(format!("no price for {asset}")))?;
            total += Cents::from_usd(units * price);
        }
        Ok(total)
    }

    /// `unit_price = tvl / token_supply`.
    pub fn unit_price(&self, prices: &BTreeMap<AssetId, f64>) -> Result<f64> {
        if self.token_supply <= 0.0 {
            return Err(Error::Validation(format!(
                "{}: unit price undefined without token supply",
                self.label
            )));
        }
        Ok(self.tvl(prices)?.to_usd() / self.token_supply)
    }

    /// Mints `deposit / unit_price` tokens to the investor. The first
    /// deposit into an empty fund mints at a unit price of 1.
    pub fn mint(
        &mut self,
        investor: &str,
        deposit: Cents,
        prices: &BTreeMap<AssetId, f64>,
    ) -> Result<f64> {
        if deposit.0 <= 0 {
            return Err(Error::Validation("deposit must be positive".into()));
        }
        let unit_price = if self.token_supply > 0.0 { self.unit_price(prices)? } else { 1.0 };
        let tokens = deposit.to_usd() / unit_price;
        self.token_supply += tokens;
        *self.investor_balances.entry(investor.to_string()).or_insert(0.0) += tokens;
        Ok(tokens)
    }

    /// Burns tokens worth `amount` at the current unit price; rejects
    /// redemptions beyond the investor's balance.
    pub fn burn(
        &mut self,
        investor: &str,
        amount: Cents,
        prices: &BTreeMap<AssetId, f64>,
    ) -> Result<f64> {
        if amount.0 <= 0 {
            return Err(Error::Validation("redemption must be positive".into()));
        }
        let unit_price = self.unit_price(prices)?;
        let tokens = amount.to_usd() / unit_price;
        let balance = self.investor_balances.get_mut(investor).ok_or_else(|| {
            Error::Validation(format!("{investor} holds no tokens of {}", self.label))
        })?;
        if tokens > *balance + 1e-9 {
            return Err(Error::Validation(format!(
                "redemption of {tokens:.4} tokens exceeds balance {balance:.4}"
            )));
        }
        *balance -= tokens;
        self.token_supply -= tokens;
        Ok(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> AssetId {
        AssetId::new(s).unwrap()
    }

    fn stat(sym: &str, vol: f64, ret: f64, corr: f64) -> AssetClassStats {
        AssetClassStats {
            asset: id(sym),
            adjusted_volatility: vol,
            expected_return: ret,
            index_correlation: corr,
        }
    }

    #[test]
    fn nine_assets_three_negative_correlations() {
        let stats: Vec<AssetClassStats> = (0..9)
            .map(|i| {
                let corr = if i < 3 { -0.2 } else { 0.5 };
                stat(&format!("A{i}"), 1.0 - i as f64 * 0.05, 0.2, corr)
            })
            .collect();
        let m = classify_assets(&stats, 0.0).unwrap();
        assert_eq!(m.gamma, vec![id("A0"), id("A1"), id("A2")]);
        // top-volatility half of the remaining six
        assert_eq!(m.alpha, vec![id("A3"), id("A4"), id("A5")]);
        assert_eq!(m.beta, vec![id("A6"), id("A7"), id("A8")]);
    }

    #[test]
    fn all_positive_correlations_use_calmest_fallback() {
        let stats = vec![
            stat("A", 0.9, 0.3, 0.8),
            stat("B", 0.4, 0.2, 0.7),
            stat("C", 0.2, 0.1, 0.6),
            stat("D", 0.6, 0.25, 0.9),
        ];
        let m = classify_assets(&stats, 0.0).unwrap();
        assert_eq!(m.gamma, vec![id("C")]);
        assert!(m.alpha.contains(&id("A")));
    }

    #[test]
    fn three_asset_example() {
        let stats = vec![stat("A", 0.9, 0.3, 0.5), stat("B", 0.4, 0.2, 0.5), stat("C", 0.2, 0.1, -0.1)];
        let m = classify_assets(&stats, 0.0).unwrap();
        assert_eq!(m.alpha, vec![id("A")]);
        assert_eq!(m.beta, vec![id("B")]);
        assert_eq!(m.gamma, vec![id("C")]);
    }

    #[test]
    fn small_universe_errors() {
        let stats = vec![stat("A", 0.9, 0.3, 0.5), stat("B", 0.4, 0.2, 0.5)];
        assert!(classify_assets(&stats, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn classification_partitions_universe(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(3..12usize);
            let stats: Vec<AssetClassStats> = (0..n)
                .map(|i| stat(
                    &format!("A{i:02}"),
                    rng.random::<f64>() * 1.5 + 0.05,
                    rng.random::<f64>() * 0.5,
                    rng.random::<f64>() * 2.0 - 1.0,
                ))
                .collect();
            let m = classify_assets(&stats, 0.0).unwrap();
            let mut all: Vec<AssetId> = Vec::new();
            all.extend(m.alpha.iter().cloned());
            all.extend(m.beta.iter().cloned());
            all.extend(m.gamma.iter().cloned());
            all.sort();
            let mut expect: Vec<AssetId> = stats.iter().map(|s| s.asset.clone()).collect();
            expect.sort();
            prop_assert_eq!(all, expect);
            prop_assert!(!m.alpha.is_empty() && !m.beta.is_empty() && !m.gamma.is_empty());
        }
    }

    fn diag3(v: [f64; 3]) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, j| if i == j { v[i] } else { 0.0 })
    }

    #[test]
    fn dominant_subfund_collapses_line_to_a_point() {
        // gamma has the highest return and the lowest vol; perfect
        // correlation removes any diversification escape, so every mix is
        // dominated by pure gamma
        let mu = [0.10, 0.15, 0.40];
        let sig = [0.5, 0.4, 0.1];
        let cov = DMatrix::from_fn(3, 3, |i, j| sig[i] * sig[j]);
        let line = build_parity_line(&mu, &cov, 0.01).unwrap();
        assert_eq!(line.points.len(), 1);
        assert_eq!(line.points[0].abg, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn uncorrelated_equal_stats_diversify() {
        // two identical uncorrelated sub-funds: the 50/50 mix cuts vol by sqrt(2)
        let mu = [0.30, 0.30, 0.0];
        let mut cov = diag3([0.25, 0.25, 0.04]);
        cov[(2, 2)] = 0.04;
        let line = build_parity_line(&mu, &cov, 0.01).unwrap();
        let top = line.max_volatility().unwrap();
        assert!((top.expected_return - 0.30).abs() < 1e-12);
        // the max-return end of the frontier is the diversified 50/50 mix
        assert!((top.abg[0] - 0.5).abs() < 1e-9 && (top.abg[1] - 0.5).abs() < 1e-9);
        assert!((top.volatility - (0.5f64 * 0.5 * 0.25 * 2.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn frontier_stable_under_grid_refinement() {
        let mu = [0.35, 0.18, 0.08];
        let cov = {
            let mut m = diag3([0.36, 0.09, 0.01]);
            m[(0, 1)] = 0.06;
            m[(1, 0)] = 0.06;
            m[(0, 2)] = -0.01;
            m[(2, 0)] = -0.01;
            m
        };
        let coarse = build_parity_line(&mu, &cov, 0.01).unwrap();
        let fine = build_parity_line(&mu, &cov, 0.001).unwrap();
        // every coarse point's volatility is attainable on the fine frontier
        // within grid tolerance
        for p in &coarse.points {
            let nearest = fine
                .points
                .iter()
                .map(|q| (q.volatility - p.volatility).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-3, "coarse point at vol {} has no fine neighbor", p.volatility);
        }
    }

    #[test]
    fn line_is_pareto_and_sorted() {
        let mu = [0.35, 0.18, 0.08];
        let mut cov = diag3([0.36, 0.09, 0.02]);
        cov[(0, 1)] = 0.05;
        cov[(1, 0)] = 0.05;
        let line = build_parity_line(&mu, &cov, 0.01).unwrap();
        for pair in line.points.windows(2) {
            assert!(pair[0].volatility <= pair[1].volatility);
            assert!(pair[0].expected_return < pair[1].expected_return);
        }
        // no frontier point strictly dominates another
        for p in &line.points {
            for q in &line.points {
                let dominates = q.volatility <= p.volatility
                    && q.expected_return >= p.expected_return
                    && (q.volatility < p.volatility || q.expected_return > p.expected_return);
                assert!(!dominates);
            }
        }
    }

    fn sample_line() -> ParityLine {
        let mu = [0.35, 0.18, 0.08];
        let mut cov = diag3([0.36, 0.09, 0.02]);
        cov[(0, 1)] = 0.05;
        cov[(1, 0)] = 0.05;
        build_parity_line(&mu, &cov, 0.01).unwrap()
    }

    #[test]
    fn explicit_weights_pass_through_and_idempotent() {
        let line = sample_line();
        let pref = InvestorPreference {
            investor_id: "alice".into(),
            mode: PreferenceMode::ExplicitWeights([0.2, 0.3, 0.5]),
        };
        let alloc = allocation_from_preference(&pref, &line).unwrap();
        assert_eq!(alloc.abg, [0.2, 0.3, 0.5]);
        let again = allocation_from_preference(
            &InvestorPreference {
                investor_id: "alice".into(),
                mode: PreferenceMode::ExplicitWeights(alloc.abg),
            },
            &line,
        )
        .unwrap();
        assert_eq!(again.abg, alloc.abg);
    }

    #[test]
    fn risk_target_at_minimum_returns_endpoint() {
        let line = sample_line();
        let min = line.min_volatility().unwrap().clone();
        let alloc = allocation_from_preference(
            &InvestorPreference {
                investor_id: "bob".into(),
                mode: PreferenceMode::RiskTarget(min.volatility),
            },
            &line,
        )
        .unwrap();
        assert_eq!(alloc.abg, min.abg);
        assert!(!alloc.clamped);
    }

    #[test]
    fn midpoint_risk_target_interpolates() {
        let line = sample_line();
        let (a, b) = (&line.points[3], &line.points[4]);
        let target = 0.5 * (a.volatility + b.volatility);
        let alloc = allocation_from_preference(
            &InvestorPreference { investor_id: "c".into(), mode: PreferenceMode::RiskTarget(target) },
            &line,
        )
        .unwrap();
        assert!((alloc.volatility - target).abs() < 1e-9);
        for i in 0..3 {
            let expect = 0.5 * (a.abg[i] + b.abg[i]);
            assert!((alloc.abg[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_targets_clamp_with_flag() {
        let line = sample_line();
        let lo = allocation_from_preference(
            &InvestorPreference { investor_id: "d".into(), mode: PreferenceMode::RiskTarget(0.0) },
            &line,
        )
        .unwrap();
        assert!(lo.clamped);
        assert_eq!(lo.abg, line.min_volatility().unwrap().abg);

        let hi = allocation_from_preference(
            &InvestorPreference { investor_id: "d".into(), mode: PreferenceMode::RiskTarget(99.0) },
            &line,
        )
        .unwrap();
        assert!(hi.clamped);
        assert_eq!(hi.abg, line.max_volatility().unwrap().abg);
    }

    #[test]
    fn default_prefers_lowest_risk() {
        let line = sample_line();
        let alloc = allocation_from_preference(
            &InvestorPreference { investor_id: "novice".into(), mode: PreferenceMode::Default },
            &line,
        )
        .unwrap();
        assert_eq!(alloc.abg, line.min_volatility().unwrap().abg);
    }

    #[test]
    fn preference_ledger_round_trips() {
        let records = vec![
            PreferenceRecord {
                investor_id: "alice".into(),
                mode: PreferenceMode::RiskTarget(0.25),
                abg_weights: [0.1, 0.4, 0.5],
                timestamp: NaiveDate::from_ymd_opt(2022, 5, 1).unwrap(),
            },
            PreferenceRecord {
                investor_id: "carol".into(),
                mode: PreferenceMode::Default,
                abg_weights: [0.0, 0.08, 0.92],
                timestamp: NaiveDate::from_ymd_opt(2022, 5, 3).unwrap(),
            },
        ];
        let text = preference_ledger_to_jsonl(&records);
        assert_eq!(parse_preference_ledger(text.as_bytes()).unwrap(), records);
        // hand-written lines, including explicit null content for default
        let manual = br#"{"investor_id":"bob","mode":"explicit_weights","value":[0.2,0.3,0.5],"abg_weights":[0.2,0.3,0.5],"timestamp":"2022-05-02"}
{"investor_id":"carol","mode":"default","value":null,"abg_weights":[0.0,0.08,0.92],"timestamp":"2022-05-03"}"#;
        let parsed = parse_preference_ledger(manual).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].mode, PreferenceMode::Default);
    }

    #[test]
    fn subfund_report_partitions_and_builds_the_line() {
        use crate::marketdata::{log_returns, rolling_volatility};
        use crate::synthetic::{generate, SyntheticSpec};
        use crate::weights::vvv_profile;
        let spec = SyntheticSpec { assets: 8, days: 400, seed: 5, ..Default::default() };
        let history = generate(&spec);
        let returns = log_returns(&history).unwrap();
        let vols = rolling_volatility(&returns, 90).unwrap();
        let profile = vvv_profile(&vols, 90).unwrap();
        let report = build_subfund_report(&returns, &profile, 0.10, 0.01, 0.0).unwrap();
        let mut all: Vec<AssetId> =
            report.subfunds.iter().flat_map(|s| s.members.iter().cloned()).collect();
        all.sort();
        assert_eq!(all, history.assets);
        assert!(!report.parity_line.points.is_empty());
        for s in &report.subfunds {
            let wsum: f64 = s.weights.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-9);
        }
        // alpha's mandate is the risky tier
        let alpha = &report.subfunds[0];
        let gamma = &report.subfunds[2];
        assert_eq!(alpha.label, SubFundLabel::Alpha);
        assert_eq!(gamma.label, SubFundLabel::Gamma);
    }

    fn flat_prices(pairs: &[(&str, f64)]) -> BTreeMap<AssetId, f64> {
        pairs.iter().map(|(s, p)| (id(s), *p)).collect()
    }

    #[test]
    fn unit_price_is_tvl_over_supply() {
        let mut fund = FundAccount::new("PARITY");
        let prices = flat_prices(&[("BTC", 100.0)]);
        fund.mint("alice", Cents::from_usd(1_000_000.0), &prices).unwrap();
        fund.holdings.insert(id("BTC"), 10_000.0);
        assert_eq!(fund.unit_price(&prices).unwrap(), 1.0);
    }

    #[test]
    fn deposit_at_elevated_price_mints_fewer_tokens() {
        let mut fund = FundAccount::new("PARITY");
        let prices = flat_prices(&[("BTC", 125.0)]);
        // bootstrap: 100k at price 1.0, fully invested at 100
        fund.mint("seed", Cents::from_usd(100_000.0), &flat_prices(&[("BTC", 100.0)])).unwrap();
        fund.holdings.insert(id("BTC"), 1_000.0);
        // price rose 25%: unit price 1.25
        assert!((fund.unit_price(&prices).unwrap() - 1.25).abs() < 1e-12);
        let minted = fund.mint("alice", Cents::from_usd(50_000.0), &prices).unwrap();
        assert!((minted - 40_000.0).abs() < 1e-9);
        // the deposit must not move the unit price (cash becomes holdings at par)
        fund.holdings.insert(id("BTC"), 1_000.0 + 50_000.0 / 125.0);
        assert!((fund.unit_price(&prices).unwrap() - 1.25).abs() < 1e-9);
    }

    #[test]
    fn appreciation_moves_price_not_supply() {
        let mut fund = FundAccount::new("PARITY");
        let p0 = flat_prices(&[("BTC", 100.0)]);
        fund.mint("alice", Cents::from_usd(10_000.0), &p0).unwrap();
        fund.holdings.insert(id("BTC"), 100.0);
        let supply = fund.token_supply;
        let p1 = flat_prices(&[("BTC", 110.0)]);
        assert!((fund.unit_price(&p1).unwrap() - 1.10).abs() < 1e-12);
        assert_eq!(fund.token_supply, supply);
    }

    #[test]
    fn redemption_beyond_balance_rejected() {
        let mut fund = FundAccount::new("PARITY");
        let prices = flat_prices(&[("BTC", 100.0)]);
        fund.mint("alice", Cents::from_usd(1_000.0), &prices).unwrap();
        fund.holdings.insert(id("BTC"), 10.0);
        assert!(fund.burn("alice", Cents::from_usd(2_000.0), &prices).is_err());
        assert!(fund.burn("bob", Cents::from_usd(100.0), &prices).is_err());
        assert!(fund.burn("alice", Cents::from_usd(500.0), &prices).is_ok());
    }

    proptest! {
        #[test]
        fn mint_burn_preserve_unit_price(
            deposit in 100.0f64..1e6,
            price in 1.0f64..1e4,
        ) {
            let mut fund = FundAccount::new("F");
            let prices = flat_prices(&[("X", price)]);
            fund.mint("seed", Cents::from_usd(1_000_000.0), &flat_prices(&[("X", price)])).unwrap();
            fund.holdings.insert(id("X"), 1_000_000.0 / price);
            let before = fund.unit_price(&prices).unwrap();

            fund.mint("alice", Cents::from_usd(deposit), &prices).unwrap();
            // deposit arrives as holdings at par
            *fund.holdings.get_mut(&id("X")).unwrap() += deposit / price;
            let after_mint = fund.unit_price(&prices).unwrap();
            prop_assert!((after_mint - before).abs() * fund.token_supply < 0.011);

            fund.burn("alice", Cents::from_usd(deposit / 2.0), &prices).unwrap();
            *fund.holdings.get_mut(&id("X")).unwrap() -= deposit / 2.0 / price;
            let after_burn = fund.unit_price(&prices).unwrap();
            prop_assert!((after_burn - before).abs() * fund.token_supply < 0.012);
        }
    }
}

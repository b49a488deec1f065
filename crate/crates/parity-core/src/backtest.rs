//! Deterministic daily-loop simulation harness.
//!
//! Each day, per fund: mark to market, crystallize fees against the
//! high-water mark, run the trickle payout, apply investor flows through the
//! safe house, recompute target weights, filter by the no-trade band, plan
//! sells then buys with the waterfall, execute with costs, and log. Money is
//! integer cents throughout, so the per-day identity
//! `tvl = tvl_prev + pnl + deposits - redemptions - costs - fee`
//! is exact and a report replays to the cent.

use crate::error::{Error, Result};
use crate::feeshare::{
    crystallize_fees, distribute_rewards, eligibility_share, trickle_payout, EligibilityPolicy,
    FeeShareEvent, FeeShareEventKind, HighWaterMark, RewardPot, StakePosition,
};
use crate::funds::{classify_assets, index_correlations, AssetClassStats, SubFundMembers};
use crate::marketdata::{
    covariance_matrix, load_price_history, log_returns, rolling_volatility, AssetId,
    IngestOptions, PriceHistory, ReturnSeries, VolatilitySeries,
};
use crate::metrics::{performance_report, CriAsset, CriInput, NavSeries, PerfRow, REPORT_INTERVALS};
use crate::money::Cents;
use crate::multichain::NetworkConfigEntry;
use crate::rebalancer::{
    asset_capacities, no_trade_filter, trade_bounds, waterfall_round_robin, AssetCost, CostModel,
    Side, TradeOrder, TradePlan,
};
use crate::safehouse::{
    sha256, OperatorSecret, SafeHouse, WithdrawalDecision,
};
use crate::synthetic::{generate, SyntheticSpec};
use crate::weights::{
    expected_returns, mvo_no_short_weights, mvo_weights, sharpe_ratio, vvv_profile_at,
    vvv_weights, WeightVector, DEFAULT_BENCHMARK_RATE,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where price history comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Vvv,
    Mvo,
    NoShort,
    Erc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Vvv, Scheme::Mvo, Scheme::NoShort, Scheme::Erc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Vvv => "vvv",
            Scheme::Mvo => "mvo",
            Scheme::NoShort => "no_short",
            Scheme::Erc => "erc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseSelection {
    All,
    Alpha,
    Beta,
    Gamma,
}

impl Default for UniverseSelection {
    fn default() -> Self {
        UniverseSelection::All
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundConfig {
    pub label: String,
    pub scheme: Scheme,
    #[serde(default)]
    pub universe: UniverseSelection,
}

/// Scripted deposit (positive) or redemption (negative) for one investor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub date: NaiveDate,
    pub investor_id: String,
    pub fund: String,
    pub amount_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    #[serde(default)]
    pub default_gas_usd: f64,
    #[serde(default = "default_pool_depth")]
    pub default_pool_depth_usd: f64,
    /// Per-asset overrides: symbol -> (gas, pool depth).
    #[serde(default)]
    pub per_asset: BTreeMap<String, (f64, f64)>,
    #[serde(default = "default_max_gas_fraction")]
    pub max_gas_fraction: f64,
    #[serde(default = "default_max_slippage")]
    pub max_slippage: f64,
}

fn default_pool_depth() -> f64 {
    5_000_000.0
}
fn default_max_gas_fraction() -> f64 {
    crate::rebalancer::DEFAULT_MAX_GAS_FRACTION
}
fn default_max_slippage() -> f64 {
    crate::rebalancer::DEFAULT_MAX_SLIPPAGE
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            default_gas_usd: 0.0,
            default_pool_depth_usd: default_pool_depth(),
            per_asset: BTreeMap::new(),
            max_gas_fraction: default_max_gas_fraction(),
            max_slippage: default_max_slippage(),
        }
    }
}

impl CostConfig {
    fn build(&self, assets: &[AssetId]) -> CostModel {
        let per_asset = assets
            .iter()
            .map(|a| {
                let (gas, depth) = self
                    .per_asset
                    .get(a.as_str())
                    .copied()
                    .unwrap_or((self.default_gas_usd, self.default_pool_depth_usd));
                (a.clone(), AssetCost { gas_fee: Cents::from_usd(gas), pool_depth: Cents::from_usd(depth) })
            })
            .collect();
        CostModel {
            per_asset,
            max_gas_fraction: self.max_gas_fraction,
            max_slippage: self.max_slippage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeConfig {
    #[serde(default = "default_fee_rate")]
    pub fee_rate: f64,
    #[serde(default = "default_community_share")]
    pub community_share: f64,
}

fn default_fee_rate() -> f64 {
    crate::feeshare::DEFAULT_FEE_RATE
}
fn default_community_share() -> f64 {
    crate::feeshare::DEFAULT_COMMUNITY_SHARE
}

impl Default for FeeConfig {
    fn default() -> Self {
        FeeConfig { fee_rate: default_fee_rate(), community_share: default_community_share() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotConfig {
    #[serde(default = "default_payout_fraction")]
    pub payout_fraction: f64,
    #[serde(default)]
    pub distribution_threshold_usd: f64,
}

fn default_payout_fraction() -> f64 {
    crate::feeshare::DEFAULT_PAYOUT_FRACTION
}

impl Default for PotConfig {
    fn default() -> Self {
        PotConfig { payout_fraction: default_payout_fraction(), distribution_threshold_usd: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeHouseConfig {
    /// Defaults to the largest per-asset maximum trade size, tying custody
    /// movements to trade size restrictions.
    #[serde(default)]
    pub per_tx_limit_usd: Option<f64>,
    #[serde(default)]
    pub daily_limit_usd: Option<f64>,
    #[serde(default = "default_chain_length")]
    pub chain_length: u32,
}

fn default_chain_length() -> u32 {
    4096
}

impl Default for SafeHouseConfig {
    fn default() -> Self {
        SafeHouseConfig { per_tx_limit_usd: None, daily_limit_usd: None, chain_length: default_chain_length() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub data: DataSource,
    /// First trading date; defaults to the first date with full warm-up.
    #[serde(default)]
    pub from: Option<NaiveDate>,
    /// Last trading date; defaults to the last data date.
    #[serde(default)]
    pub to: Option<NaiveDate>,
    #[serde(default = "default_rebalance_every")]
    pub rebalance_every_days: u32,
    #[serde(default = "default_vol_window")]
    pub vol_window: usize,
    #[serde(default = "default_vol_window")]
    pub vvv_window: usize,
    #[serde(default = "default_benchmark")]
    pub benchmark_rate: f64,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub fee: FeeConfig,
    #[serde(default)]
    pub pot: PotConfig,
    #[serde(default)]
    pub safehouse: SafeHouseConfig,
    pub funds: Vec<FundConfig>,
    #[serde(default)]
    pub flows: Vec<FlowEvent>,
    #[serde(default)]
    pub stakes: Vec<StakePosition>,
    #[serde(default)]
    pub eligibility: Option<EligibilityPolicy>,
    /// Seeds operator chains (and synthetic data when used inline).
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Optional multichain profile echoed into the report for bridge tooling.
    #[serde(default)]
    pub networks: Option<Vec<NetworkConfigEntry>>,
}

fn default_rebalance_every() -> u32 {
    1
}
fn default_vol_window() -> usize {
    crate::marketdata::DEFAULT_VOL_WINDOW
}
fn default_benchmark() -> f64 {
    DEFAULT_BENCHMARK_RATE
}
fn default_band() -> f64 {
    crate::rebalancer::DEFAULT_NO_TRADE_BAND
}
fn default_seed() -> u64 {
    42
}

impl BacktestConfig {
    /// Parses and validates a config document; fuzz entry point.
    pub fn from_json(bytes: &[u8]) -> Result<BacktestConfig> {
        let config: BacktestConfig = serde_json::from_slice(bytes)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.funds.is_empty() {
            return Err(Error::Validation("config needs at least one fund".into()));
        }
        let mut labels: Vec<&str> = self.funds.iter().map(|f| f.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.funds.len() {
            return Err(Error::Validation("fund labels must be unique".into()));
        }
        if self.rebalance_every_days == 0 {
            return Err(Error::Validation("rebalance_every_days must be positive".into()));
        }
        if !(2..=10_000).contains(&self.vol_window) || !(2..=10_000).contains(&self.vvv_window) {
            return Err(Error::Validation("windows must be between 2 and 10,000 days".into()));
        }
        if !(self.band >= 0.0 && self.band.is_finite()) {
            return Err(Error::Validation("band must be finite and non-negative".into()));
        }
        if !self.benchmark_rate.is_finite() {
            return Err(Error::Validation("benchmark rate must be finite".into()));
        }
        let usd_ok = |v: f64| v.is_finite() && v.abs() <= 9.0e13;
        if !usd_ok(self.cost.default_gas_usd)
            || !usd_ok(self.cost.default_pool_depth_usd)
            || self.cost.per_asset.values().any(|(g, d)| !usd_ok(*g) || !usd_ok(*d))
        {
            return Err(Error::Validation("cost amounts must be finite USD values".into()));
        }
        if !usd_ok(self.pot.distribution_threshold_usd)
            || self.safehouse.per_tx_limit_usd.is_some_and(|v| !usd_ok(v))
            || self.safehouse.daily_limit_usd.is_some_and(|v| !usd_ok(v))
        {
            return Err(Error::Validation("limits must be finite USD values".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            if !(1..=1_000).contains(&spec.assets) || !(2..=40_000).contains(&spec.days) {
                return Err(Error::Validation(
                    "synthetic spec must have 1..=1000 assets and 2..=40000 days".into(),
                ));
            }
            if spec.start_date.checked_add_days(chrono::Days::new(spec.days as u64)).is_none() {
                return Err(Error::Validation("synthetic start date too late".into()));
            }
            let nums = [
                spec.base_annual_vol,
                spec.base_annual_drift,
                spec.crash.map_or(0.0, |c| c.daily_drift),
                spec.crash.map_or(0.0, |c| c.daily_vol),
            ];
            if nums.iter().any(|v| !v.is_finite()) || spec.base_annual_vol < 0.0 {
                return Err(Error::Validation("synthetic spec numbers must be finite".into()));
            }
        }
        for p in &self.stakes {
            if !p.project_tokens_staked.is_finite() || !p.fund_tokens_staked.is_finite() {
                return Err(Error::Validation("stake amounts must be finite".into()));
            }
        }
        for f in &self.flows {
            if !f.amount_usd.is_finite() || f.amount_usd == 0.0 || f.amount_usd.abs() > 9.0e13 {
                return Err(Error::Validation(format!(
                    "flow for {} on {} must be non-zero, finite USD",
                    f.investor_id, f.date
                )));
            }
            if !self.funds.iter().any(|fc| fc.label == f.fund) {
                return Err(Error::Validation(format!("flow references unknown fund {}", f.fund)));
            }
        }
        Ok(())
    }
}

/// One fund-day of accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundDay {
    pub date: NaiveDate,
    pub tvl: Cents,
    pub unit_price: f64,
    pub pnl: Cents,
    pub deposits: Cents,
    pub redemptions_paid: Cents,
    pub redemptions_deferred: Cents,
    pub costs: Cents,
    pub fee: Cents,
    pub pot_credit: Cents,
    pub payout: Cents,
    pub rewards_paid: Cents,
    pub cash: Cents,
    pub token_supply: f64,
    pub unallocated: Cents,
    /// Target weights could not be computed and yesterday's were reused.
    pub weight_fallback: bool,
    pub orders: Vec<TradeOrder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundResult {
    pub label: String,
    pub scheme: Scheme,
    pub universe: Vec<AssetId>,
    pub days: Vec<FundDay>,
    pub final_positions: BTreeMap<AssetId, Cents>,
    pub pot_balance: Cents,
    pub fee_events: Vec<FeeShareEvent>,
    pub audit_log: Vec<crate::safehouse::AuditEvent>,
}

impl FundResult {
    pub fn nav_series(&self) -> NavSeries {
        NavSeries {
            entity: self.label.clone(),
            dates: self.days.iter().map(|d| d.date).collect(),
            nav: self.days.iter().map(|d| d.unit_price).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub first_trading_date: NaiveDate,
    pub last_trading_date: NaiveDate,
    pub classification: Option<SubFundMembers>,
    pub funds: Vec<FundResult>,
    pub metrics: Vec<PerfRow>,
}

impl BacktestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Loads the configured data source.
pub fn load_data(config: &BacktestConfig) -> Result<PriceHistory> {
    match &config.data {
        DataSource::Csv { path } => {
            let (h, _) = load_price_history(Path::new(path), None, &IngestOptions::default())?;
            Ok(h)
        }
        DataSource::Synthetic(spec) => Ok(generate(spec)),
    }
}

struct FundState {
    label: String,
    scheme: Scheme,
    universe: Vec<usize>, // indices into history.assets
    positions: BTreeMap<AssetId, Cents>,
    cash: Cents,
    token_supply: f64,
    balances: BTreeMap<String, f64>,
    hwm: HighWaterMark,
    pot: RewardPot,
    last_unit_price: f64,
    last_targets: Option<WeightVector>,
    pending_redemptions: BTreeMap<String, Cents>,
    safehouse: SafeHouse,
    operator: OperatorSecret,
    epoch: u32,
    fee_events: Vec<FeeShareEvent>,
    days: Vec<FundDay>,
}

impl FundState {
    fn tvl(&self) -> Cents {
        self.positions.values().copied().sum::<Cents>() + self.cash
    }
}

fn scheme_weights(
    scheme: Scheme,
    universe: &[usize],
    history: &PriceHistory,
    returns: &ReturnSeries,
    vols: &VolatilitySeries,
    price_index: usize,
    config: &BacktestConfig,
) -> Result<WeightVector> {
    let assets: Vec<AssetId> = universe.iter().map(|&i| history.assets[i].clone()).collect();
    match scheme {
        Scheme::Vvv => {
            let row = price_index - config.vol_window;
            let profile = vvv_profile_at(vols, config.vvv_window, row)?;
            let sub = crate::weights::VolatilityProfile {
                assets: assets.clone(),
                volatility: universe.iter().map(|&i| profile.volatility[i]).collect(),
                vvv_factor: universe.iter().map(|&i| profile.vvv_factor[i]).collect(),
                adjusted: universe.iter().map(|&i| profile.adjusted[i]).collect(),
            };
            vvv_weights(&sub)
        }
        Scheme::Mvo | Scheme::NoShort | Scheme::Erc => {
            // trailing vol_window returns ending at the current close
            let end = price_index; // return rows [end - w, end)
            let start = end - config.vol_window;
            let sliced = slice_returns(returns, universe, start, end);
            let mu = expected_returns(&sliced)?;
            let cov = covariance_matrix(&sliced)?;
            match scheme {
                Scheme::Mvo => mvo_weights(&mu, &cov, config.benchmark_rate),
                Scheme::NoShort => {
                    Ok(mvo_no_short_weights(&mu, &cov, config.benchmark_rate)?.weights)
                }
                Scheme::Erc => crate::weights::erc_weights(&cov),
                Scheme::Vvv => unreachable!(),
            }
        }
    }
}

fn slice_returns(
    returns: &ReturnSeries,
    universe: &[usize],
    start: usize,
    end: usize,
) -> ReturnSeries {
    ReturnSeries {
        assets: universe.iter().map(|&i| returns.assets[i].clone()).collect(),
        dates: returns.dates[start..end].to_vec(),
        log_returns: returns.log_returns[start..end]
            .iter()
            .map(|row| universe.iter().map(|&i| row[i]).collect())
            .collect(),
    }
}

/// Splits `total` pro-rata over positive position values, largest remainder,
/// so the parts sum exactly.
fn deduct_pro_rata(positions: &mut BTreeMap<AssetId, Cents>, total: Cents) {
    if total.is_zero() {
        return;
    }
    let keys: Vec<AssetId> = positions.keys().cloned().collect();
    let values: Vec<f64> = keys.iter().map(|k| positions[k].0.max(0) as f64).collect();
    if values.iter().sum::<f64>() <= 0.0 {
        // nothing to deduct from; push onto the first position (debt)
        if let Some(k) = keys.first() {
            *positions.get_mut(k).unwrap() -= total;
        }
        return;
    }
    let parts = crate::money::apportion(total, &values);
    for (k, p) in keys.iter().zip(parts) {
        *positions.get_mut(k).unwrap() -= p;
    }
}

/// Runs the configured simulation.
pub fn run_backtest(config: &BacktestConfig) -> Result<BacktestReport> {
    config.validate()?;
    let history = load_data(config)?;
    let returns = log_returns(&history)?;
    let vols = rolling_volatility(&returns, config.vol_window)?;

    // first price index with a full volatility window plus a full vvv window
    let warmup = config.vol_window + config.vvv_window - 1;
    if history.n_days() <= warmup {
        return Err(Error::InsufficientData(format!(
            "need more than {warmup} days of data for warm-up, have {}",
            history.n_days()
        )));
    }
    let first_runnable = history.dates[warmup];
    let start_index = match config.from {
        None => warmup,
        Some(from) => {
            let idx = history
                .dates
                .iter()
                .position(|d| *d == from)
                .ok_or_else(|| Error::Data(format!("start date {from} not in data")))?;
            if idx < warmup {
                return Err(Error::InsufficientData(format!(
                    "warm-up insufficient before {from}; first runnable date is {first_runnable}"
                )));
            }
            idx
        }
    };
    let end_index = match config.to {
        None => history.n_days() - 1,
        Some(to) => history
            .dates
            .iter()
            .position(|d| *d == to)
            .ok_or_else(|| Error::Data(format!("end date {to} not in data")))?,
    };
    if end_index < start_index {
        return Err(Error::Validation("backtest range is empty".into()));
    }
    for f in &config.flows {
        if f.date < history.dates[start_index] || f.date > history.dates[end_index] {
            return Err(Error::Validation(format!(
                "flow on {} is outside the trading range {}..{}",
                f.date, history.dates[start_index], history.dates[end_index]
            )));
        }
    }

    // classification snapshot at the first trading day
    let classification = if history.n_assets() >= 3 {
        let row = start_index - config.vol_window;
        let profile = vvv_profile_at(&vols, config.vvv_window, row)?;
        let index_w = vvv_weights(&profile)?;
        let sliced = slice_returns(
            &returns,
            &(0..history.n_assets()).collect::<Vec<_>>(),
            start_index - config.vol_window,
            start_index,
        );
        let mu = expected_returns(&sliced)?;
        let corrs = index_correlations(&sliced, &index_w)?;
        let stats: Vec<AssetClassStats> = history
            .assets
            .iter()
            .enumerate()
            .map(|(i, a)| AssetClassStats {
                asset: a.clone(),
                adjusted_volatility: profile.adjusted[i],
                expected_return: mu.mu[i],
                index_correlation: corrs[i],
            })
            .collect();
        Some(classify_assets(&stats, crate::funds::DEFAULT_GAMMA_CORR_MAX)?)
    } else {
        None
    };

    let cost_model = config.cost.build(&history.assets);
    let bounds = trade_bounds(&cost_model)?;
    let max_trade_overall = bounds
        .per_asset
        .values()
        .filter(|b| !b.untradeable)
        .map(|b| b.max_trade)
        .max()
        .unwrap_or(Cents(1_000_000_00));
    let per_tx_limit = config
        .safehouse
        .per_tx_limit_usd
        .map(Cents::from_usd)
        .unwrap_or(max_trade_overall)
        .max(Cents(1));
    let daily_limit = config
        .safehouse
        .daily_limit_usd
        .map(Cents::from_usd)
        .unwrap_or(Cents(per_tx_limit.0.saturating_mul(1000)))
        .max(per_tx_limit);

    let eligibility = config.eligibility.clone().unwrap_or_default();
    let shares: Vec<(StakePosition, f64)> = config
        .stakes
        .iter()
        .map(|p| Ok((p.clone(), eligibility_share(p, &eligibility)?)))
        .collect::<Result<_>>()?;

    let mut funds: Vec<FundState> = Vec::new();
    for fc in &config.funds {
        let universe: Vec<usize> = match (fc.universe, &classification) {
            (UniverseSelection::All, _) => (0..history.n_assets()).collect(),
            (sel, Some(members)) => {
                let ids = match sel {
                    UniverseSelection::Alpha => &members.alpha,
                    UniverseSelection::Beta => &members.beta,
                    UniverseSelection::Gamma => &members.gamma,
                    UniverseSelection::All => unreachable!(),
                };
                ids.iter().map(|a| history.asset_index(a).expect("classified asset exists")).collect()
            }
            (_, None) => {
                return Err(Error::Validation(format!(
                    "fund {} needs a sub-fund universe but the universe has fewer than 3 assets",
                    fc.label
                )))
            }
        };
        if universe.is_empty() {
            return Err(Error::Validation(format!("fund {} has an empty universe", fc.label)));
        }
        let mut op_seed = [0u8; 32];
        let digest = sha256(format!("{}:{}", config.seed, fc.label).as_bytes());
        op_seed.copy_from_slice(&digest.0);
        let operator_id = format!("treasury-{}", fc.label);
        let operator = OperatorSecret::new(&operator_id, op_seed, config.safehouse.chain_length);
        let safehouse = SafeHouse::new(per_tx_limit, daily_limit, vec![operator.chain()?])?;
        funds.push(FundState {
            label: fc.label.clone(),
            scheme: fc.scheme,
            universe,
            positions: BTreeMap::new(),
            cash: Cents::ZERO,
            token_supply: 0.0,
            balances: BTreeMap::new(),
            hwm: HighWaterMark::new(1.0, config.fee.fee_rate, config.fee.community_share)?,
            pot: RewardPot::new(
                config.pot.payout_fraction,
                Cents::from_usd(config.pot.distribution_threshold_usd),
            )?,
            last_unit_price: 1.0,
            last_targets: None,
            pending_redemptions: BTreeMap::new(),
            safehouse,
            operator,
            epoch: 0,
            fee_events: Vec::new(),
            days: Vec::new(),
        });
    }

    let mut flows_by_date: BTreeMap<NaiveDate, Vec<&FlowEvent>> = BTreeMap::new();
    for f in &config.flows {
        flows_by_date.entry(f.date).or_default().push(f);
    }

    for t in start_index..=end_index {
        let date = history.dates[t];
        let is_rebalance_day = ((t - start_index) as u32) % config.rebalance_every_days == 0;
        for fund in &mut funds {
            step_fund_day(
                fund, t, date, is_rebalance_day, &history, &returns, &vols, config, &cost_model,
                &bounds, &flows_by_date, &shares,
            )?;
        }
    }

    // final metrics: trailing-interval stats plus CRI from closing weights
    let mut cri_inputs: BTreeMap<String, CriInput> = BTreeMap::new();
    for fund in &funds {
        let positions_total: Cents = fund.positions.values().copied().sum();
        if positions_total.0 <= 0 {
            continue;
        }
        let universe_cap: f64 =
            (0..history.n_assets()).map(|a| history.market_cap[end_index][a]).sum();
        let vol_row = end_index - config.vol_window;
        let assets: Vec<CriAsset> = fund
            .positions
            .iter()
            .filter(|(_, v)| v.0 > 0)
            .map(|(asset, value)| {
                let i = history.asset_index(asset).expect("asset exists");
                CriAsset {
                    asset: asset.clone(),
                    weight: value.0 as f64 / positions_total.0 as f64,
                    market_cap_usd: history.market_cap[end_index][i],
                    volatility: vols.vols[vol_row][i].max(1e-9),
                    chain_fractions: None,
                }
            })
            .collect();
        if !assets.is_empty() {
            cri_inputs.insert(
                fund.label.clone(),
                CriInput { assets, universe_market_cap_usd: universe_cap, sigma_ref: None },
            );
        }
    }
    // funds that blew through zero (possible with shorting schemes) have no
    // meaningful NAV statistics and are left out of the interval report
    let nav_series: Vec<NavSeries> = funds
        .iter()
        .filter(|f| f.days.iter().all(|d| d.unit_price > 0.0))
        .map(|f| NavSeries {
            entity: f.label.clone(),
            dates: f.days.iter().map(|d| d.date).collect(),
            nav: f.days.iter().map(|d| d.unit_price).collect(),
        })
        .collect();
    let metrics = if nav_series.is_empty() {
        Vec::new()
    } else {
        performance_report(&nav_series, &cri_inputs, config.benchmark_rate, &REPORT_INTERVALS)?
    };

    Ok(BacktestReport {
        config: config.clone(),
        first_trading_date: history.dates[start_index],
        last_trading_date: history.dates[end_index],
        classification,
        funds: funds
            .into_iter()
            .map(|f| FundResult {
                label: f.label,
                scheme: f.scheme,
                universe: f.universe.iter().map(|&i| history.assets[i].clone()).collect(),
                days: f.days,
                final_positions: f.positions,
                pot_balance: f.pot.balance,
                fee_events: f.fee_events,
                audit_log: f.safehouse.audit_log,
            })
            .collect(),
        metrics,
    })
}

#[allow(clippy::too_many_arguments)]
fn step_fund_day(
    fund: &mut FundState,
    t: usize,
    date: NaiveDate,
    is_rebalance_day: bool,
    history: &PriceHistory,
    returns: &ReturnSeries,
    vols: &VolatilitySeries,
    config: &BacktestConfig,
    cost_model: &CostModel,
    bounds: &crate::rebalancer::TradeBounds,
    flows_by_date: &BTreeMap<NaiveDate, Vec<&FlowEvent>>,
    shares: &[(StakePosition, f64)],
) -> Result<()> {
    fund.epoch += 1;
    let tvl_prev = fund.tvl();

    // 1. mark to market
    let mut pnl = Cents::ZERO;
    for (asset, value) in fund.positions.iter_mut() {
        let i = history.asset_index(asset).expect("asset exists");
        let marked = value.scale(history.close[t][i], history.close[t - 1][i]);
        pnl += marked - *value;
        *value = marked;
    }

    // 2. crystallize fees on the marked unit price
    let mut fee = Cents::ZERO;
    let mut pot_credit = Cents::ZERO;
    if fund.token_supply > 0.0 {
        let unit_price = fund.tvl().to_usd() / fund.token_supply;
        if unit_price > 0.0 {
            let outcome = crystallize_fees(&mut fund.hwm, unit_price, fund.token_supply)?;
            fee = outcome.fee;
            pot_credit = outcome.pot_credit;
            if fee.0 > 0 {
                // fee leaves the fund: cash first, remainder from positions
                let from_cash = fee.min(fund.cash.max(Cents::ZERO));
                fund.cash -= from_cash;
                deduct_pro_rata(&mut fund.positions, fee - from_cash);
                fund.fee_events.push(FeeShareEvent {
                    epoch: fund.epoch,
                    fund: fund.label.clone(),
                    event: FeeShareEventKind::Fee,
                    amount: fee,
                    investor_id: None,
                });
                fund.fee_events.push(FeeShareEvent {
                    epoch: fund.epoch,
                    fund: fund.label.clone(),
                    event: FeeShareEventKind::PotCredit,
                    amount: pot_credit,
                    investor_id: None,
                });
            }
        }
    }

    // 3. trickle payout and reward distribution (pot sits outside the fund)
    let payout = trickle_payout(&mut fund.pot, pot_credit)?;
    let mut rewards_paid = Cents::ZERO;
    if payout.0 > 0 {
        fund.fee_events.push(FeeShareEvent {
            epoch: fund.epoch,
            fund: fund.label.clone(),
            event: FeeShareEventKind::Payout,
            amount: payout,
            investor_id: None,
        });
        let (rewards, leftover) = distribute_rewards(payout, shares)?;
        for r in &rewards {
            rewards_paid += r.amount;
            fund.fee_events.push(FeeShareEvent {
                epoch: fund.epoch,
                fund: fund.label.clone(),
                event: FeeShareEventKind::Reward,
                amount: r.amount,
                investor_id: Some(r.investor_id.clone()),
            });
        }
        fund.pot.balance += leftover;
    }

    // unit price at which today's flows mint and burn
    let unit_price_flow = if fund.token_supply > 0.0 {
        fund.tvl().to_usd() / fund.token_supply
    } else {
        1.0
    };

    // 4. flows through the safe house
    let mut deposits = Cents::ZERO;
    let mut requested: BTreeMap<String, Cents> = std::mem::take(&mut fund.pending_redemptions);
    if let Some(events) = flows_by_date.get(&date) {
        for f in events.iter().filter(|f| f.fund == fund.label) {
            let amount = Cents::from_usd(f.amount_usd.abs());
            if f.amount_usd > 0.0 {
                let tokens = amount.to_usd() / unit_price_flow;
                fund.token_supply += tokens;
                *fund.balances.entry(f.investor_id.clone()).or_insert(0.0) += tokens;
                fund.cash += amount;
                deposits += amount;
                fund.safehouse.record_deposit(date, &f.investor_id, amount);
            } else {
                *requested.entry(f.investor_id.clone()).or_insert(Cents::ZERO) += amount;
            }
        }
    }
    // cap each request by the investor's balance and gate it through the
    // safe house in per-transaction chunks
    let mut approved: Vec<(String, Cents)> = Vec::new();
    let mut approved_total = Cents::ZERO;
    let mut deferred: BTreeMap<String, Cents> = BTreeMap::new();
    for (investor, want) in requested {
        let balance_tokens = fund.balances.get(&investor).copied().unwrap_or(0.0);
        let balance_value = Cents((balance_tokens * unit_price_flow * 100.0).floor() as i64);
        let want_capped = want.min(balance_value);
        if want_capped.0 <= 0 {
            continue; // nothing redeemable
        }
        let mut granted = Cents::ZERO;
        let mut remaining = want_capped;
        while remaining.0 > 0 {
            let chunk = remaining.min(fund.safehouse.per_tx_limit);
            let Some(reveal) = fund.operator.next_reveal() else { break };
            match fund.safehouse.request_withdrawal(date, &fund.operator.operator_id, chunk, &reveal)? {
                WithdrawalDecision::Accepted => {
                    granted += chunk;
                    remaining -= chunk;
                }
                WithdrawalDecision::Rejected { .. } => break,
            }
        }
        if granted.0 > 0 {
            approved.push((investor.clone(), granted));
            approved_total += granted;
        }
        if remaining.0 > 0 {
            *deferred.entry(investor).or_insert(Cents::ZERO) += remaining;
        }
    }

    // 5. rebalance: sells toward post-flow capacities, then buys with cash
    let mut orders: Vec<TradeOrder> = Vec::new();
    let mut costs = Cents::ZERO;
    let mut unallocated = Cents::ZERO;
    let mut weight_fallback = false;
    if is_rebalance_day {
        let tvl_now = fund.tvl();
        let base = tvl_now - approved_total;
        if base.0 > 0 {
            let assets: Vec<AssetId> =
                fund.universe.iter().map(|&i| history.assets[i].clone()).collect();
            let targets = match scheme_weights(
                fund.scheme, &fund.universe, history, returns, vols, t, config,
            ) {
                Ok(w) => w,
                Err(_) => {
                    weight_fallback = true;
                    match &fund.last_targets {
                        Some(w) => w.clone(),
                        None => WeightVector::new(
                            assets.clone(),
                            vec![1.0 / assets.len() as f64; assets.len()],
                        )?,
                    }
                }
            };
            fund.last_targets = Some(targets.clone());

            let current = WeightVector {
                assets: assets.clone(),
                weights: assets
                    .iter()
                    .map(|a| {
                        fund.positions.get(a).copied().unwrap_or(Cents::ZERO).0 as f64
                            / base.0 as f64
                    })
                    .collect(),
            };
            let mut actionable = no_trade_filter(&current, &targets, config.band)?;
            let capacities = asset_capacities(&targets, tvl_now, -approved_total, &fund.positions)?;
            // funding a redemption is a real signal, not noise: widen the
            // sell set when cash cannot cover the approved outflow
            if fund.cash < approved_total {
                for c in &capacities {
                    if c.headroom().0 < 0 {
                        actionable.insert(c.asset.clone());
                    }
                }
            }

            let sell_total: Cents = capacities
                .iter()
                .filter(|c| actionable.contains(&c.asset))
                .map(|c| (-c.headroom()).max(Cents::ZERO))
                .sum();
            if sell_total.0 > 0 {
                let plan =
                    waterfall_round_robin(&capacities, bounds, &actionable, -sell_total, cost_model)?;
                apply_plan(fund, &plan, &mut costs);
                orders.extend(plan.orders);
            }

            let buy_cash = fund.cash - approved_total;
            if buy_cash.0 > 0 {
                let capacities =
                    asset_capacities(&targets, fund.tvl(), -approved_total, &fund.positions)?;
                let plan =
                    waterfall_round_robin(&capacities, bounds, &actionable, buy_cash, cost_model)?;
                apply_plan(fund, &plan, &mut costs);
                unallocated = plan.unallocated;
                orders.extend(plan.orders);
            }
        }
    }

    // 6. pay what cash allows; the rest rolls to tomorrow
    let mut redemptions_paid = Cents::ZERO;
    let mut payable = approved_total.min(fund.cash.max(Cents::ZERO));
    for (investor, granted) in approved {
        let pay = granted.min(payable);
        payable -= pay;
        if pay.0 > 0 {
            let tokens = pay.to_usd() / unit_price_flow;
            if let Some(balance) = fund.balances.get_mut(&investor) {
                *balance = (*balance - tokens).max(0.0);
            }
            fund.token_supply = (fund.token_supply - tokens).max(0.0);
            fund.cash -= pay;
            redemptions_paid += pay;
        }
        let shortfall = granted - pay;
        if shortfall.0 > 0 {
            *deferred.entry(investor).or_insert(Cents::ZERO) += shortfall;
        }
    }
    let redemptions_deferred: Cents = deferred.values().copied().sum();
    fund.pending_redemptions = deferred;

    // 7. close the day
    let tvl = fund.tvl();
    debug_assert_eq!(
        tvl,
        tvl_prev + pnl + deposits - redemptions_paid - costs - fee,
        "daily conservation identity"
    );
    let unit_price = if fund.token_supply > 1e-12 {
        tvl.to_usd() / fund.token_supply
    } else {
        fund.last_unit_price
    };
    fund.last_unit_price = unit_price;
    fund.days.push(FundDay {
        date,
        tvl,
        unit_price,
        pnl,
        deposits,
        redemptions_paid,
        redemptions_deferred,
        costs,
        fee,
        pot_credit,
        payout,
        rewards_paid,
        cash: fund.cash,
        token_supply: fund.token_supply,
        unallocated,
        weight_fallback,
        orders,
    });
    Ok(())
}

fn apply_plan(fund: &mut FundState, plan: &TradePlan, costs: &mut Cents) {
    for order in &plan.orders {
        let position = fund.positions.entry(order.asset.clone()).or_insert(Cents::ZERO);
        match order.side {
            Side::Buy => {
                *position += order.notional;
                fund.cash -= order.notional;
            }
            Side::Sell => {
                *position -= order.notional;
                fund.cash += order.notional;
            }
        }
        fund.cash -= order.cost();
        *costs += order.cost();
    }
}

/// Recomputes each fund's TVL path from its day records alone.
///
/// `tvl_d = tvl_(d-1) + pnl + deposits - redemptions_paid - costs - fee`;
/// a report is internally consistent iff this reproduces the recorded path.
pub fn replay_nav(report: &BacktestReport) -> Result<Vec<Vec<Cents>>> {
    let mut out = Vec::new();
    for fund in &report.funds {
        let mut tvl = Cents::ZERO;
        let mut path = Vec::with_capacity(fund.days.len());
        for day in &fund.days {
            tvl = tvl + day.pnl + day.deposits - day.redemptions_paid - day.costs - day.fee;
            if tvl != day.tvl {
                return Err(Error::Validation(format!(
                    "{}: replay diverges on {}: {} vs recorded {}",
                    fund.label, day.date, tvl, day.tvl
                )));
            }
            path.push(tvl);
        }
        out.push(path);
    }
    Ok(out)
}

/// Scheme comparison over a shared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub schemes: Vec<String>,
    pub expected_return: Vec<f64>,
    pub volatility: Vec<f64>,
    pub sharpe: Vec<Option<f64>>,
    pub max_drawdown: Vec<f64>,
}

/// Runs one backtest per scheme (same data, same flows) and tabulates
/// annualized return, volatility, Sharpe and max drawdown of unit price.
pub fn compare_schemes(config: &BacktestConfig, schemes: &[Scheme]) -> Result<ComparisonTable> {
    let mut table = ComparisonTable {
        schemes: schemes.iter().map(|s| s.name().to_string()).collect(),
        expected_return: Vec::new(),
        volatility: Vec::new(),
        sharpe: Vec::new(),
        max_drawdown: Vec::new(),
    };
    for &scheme in schemes {
        let mut cfg = config.clone();
        let label = scheme.name().to_string();
        cfg.funds = vec![FundConfig { label: label.clone(), scheme, universe: UniverseSelection::All }];
        cfg.flows = config
            .flows
            .iter()
            .map(|f| FlowEvent { fund: label.clone(), ..f.clone() })
            .collect();
        let report = run_backtest(&cfg)?;
        let nav: Vec<f64> = report.funds[0].days.iter().map(|d| d.unit_price).collect();
        if nav.iter().any(|p| *p <= 0.0) {
            // the scheme wiped the fund out; report a total drawdown
            table.expected_return.push(f64::NAN);
            table.volatility.push(f64::NAN);
            table.sharpe.push(None);
            table.max_drawdown.push(1.0);
            continue;
        }
        let rets: Vec<f64> = nav.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        let (vol, mean_annual) = if rets.len() >= 2 {
            (
                crate::marketdata::sample_std(&rets) * crate::marketdata::ANNUALIZATION_DAYS.sqrt(),
                rets.iter().sum::<f64>() / rets.len() as f64 * crate::marketdata::ANNUALIZATION_DAYS,
            )
        } else {
            (0.0, 0.0)
        };
        let mut peak = f64::MIN;
        let mut max_dd = 0.0f64;
        for &p in &nav {
            peak = peak.max(p);
            max_dd = max_dd.max((peak - p) / peak);
        }
        table.expected_return.push(mean_annual);
        table.volatility.push(vol);
        table.sharpe.push(sharpe_ratio(mean_annual, vol, config.benchmark_rate));
        table.max_drawdown.push(max_dd);
    }
    Ok(table)
}

/// Renders the comparison in the weights-table trailer layout: one metric
/// per row, one scheme per column.
pub fn comparison_csv(table: &ComparisonTable) -> String {
    let mut out = String::from("metric");
    for s in &table.schemes {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    let mut row = |name: &str, values: &[String]| {
        out.push_str(name);
        for v in values {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
    };
    row(
        "portfolio_expected_return",
        &table.expected_return.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
    );
    row(
        "portfolio_volatility",
        &table.volatility.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
    );
    row(
        "sharpe_ratio",
        &table
            .sharpe
            .iter()
            .map(|v| v.map_or_else(|| "nan".into(), |x| format!("{x:.6}")))
            .collect::<Vec<_>>(),
    );
    row(
        "max_drawdown",
        &table.max_drawdown.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
    );
    out
}

/// Writes the report artifacts into a directory.
pub fn write_report_dir(report: &BacktestReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(
        dir.join("metrics.csv"),
        crate::metrics::perf_report_csv(&report.metrics),
    )?;
    for fund in &report.funds {
        let mut nav = String::from("date,unit_price,tvl_usd\n");
        for d in &fund.days {
            nav.push_str(&format!("{},{:.8},{:.2}\n", d.date, d.unit_price, d.tvl.to_usd()));
        }
        std::fs::write(dir.join(format!("nav_{}.csv", fund.label)), nav)?;
        std::fs::write(
            dir.join(format!("audit_{}.jsonl", fund.label)),
            crate::safehouse::audit_log_to_jsonl(&fund.audit_log),
        )?;
        std::fs::write(
            dir.join(format!("events_{}.jsonl", fund.label)),
            crate::feeshare::events_to_jsonl(&fund.fee_events),
        )?;
    }
    Ok(())
}

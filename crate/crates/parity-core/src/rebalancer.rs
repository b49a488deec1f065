//! Cost-aware trade planning: asset capacities, min-max trade bounds and the
//! cascading waterfall round-robin allocation loop.
//!
//! Flow is distributed over assets in a fixed circular order (largest need
//! first), in chunks capped by each asset's maximum trade size, until the
//! flow is exhausted or nothing more can be placed. Trades smaller than the
//! per-asset minimum are skipped. All notionals are integer cents so that
//! `buys - sells = placed flow` holds exactly.

use crate::error::{Error, Result};
use crate::marketdata::AssetId;
use crate::money::{apportion, Cents};
use crate::weights::WeightVector;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Target and current dollar holding for one asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetCapacity {
    pub asset: AssetId,
    pub capacity: Cents,
    pub current: Cents,
}

impl AssetCapacity {
    /// `capacity - current`; negative when the asset is over target.
    pub fn headroom(&self) -> Cents {
        self.capacity - self.current
    }
}

/// `capacity_i = w_i * (tvl + net_flow)`, apportioned so capacities sum to
/// the post-flow total exactly.
pub fn asset_capacities(
    targets: &WeightVector,
    tvl: Cents,
    net_flow: Cents,
    current: &BTreeMap<AssetId, Cents>,
) -> Result<Vec<AssetCapacity>> {
    let total = tvl + net_flow;
    if total.0 < 0 {
        return Err(Error::Validation(format!(
            "redemption exceeds fund: tvl {tvl} + flow {net_flow} is negative"
        )));
    }
    let parts = apportion(total, &targets.weights);
    Ok(targets
        .assets
        .iter()
        .zip(parts)
        .map(|(asset, capacity)| AssetCapacity {
            asset: asset.clone(),
            capacity,
            current: current.get(asset).copied().unwrap_or(Cents::ZERO),
        })
        .collect())
}

/// Per-asset execution cost drivers plus global tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub per_asset: BTreeMap<AssetId, AssetCost>,
    /// Gas may consume at most this fraction of a trade's notional.
    pub max_gas_fraction: f64,
    /// Acceptable slippage fraction under the constant-product model.
    pub max_slippage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetCost {
    /// Flat per-transaction gas fee.
    pub gas_fee: Cents,
    /// Liquidity reference of the asset's pool.
    pub pool_depth: Cents,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_gas_fraction > 0.0 && self.max_gas_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "max_gas_fraction {} must be in (0, 1)",
                self.max_gas_fraction
            )));
        }
        if !(self.max_slippage > 0.0 && self.max_slippage < 1.0) {
            return Err(Error::Validation(format!(
                "max_slippage {} must be in (0, 1)",
                self.max_slippage
            )));
        }
        for (asset, c) in &self.per_asset {
            if c.gas_fee.0 < 0 {
                return Err(Error::Validation(format!("{asset}: negative gas fee")));
            }
            if c.pool_depth.0 <= 0 {
                return Err(Error::Validation(format!("{asset}: pool depth must be positive")));
            }
        }
        Ok(())
    }

    pub fn cost_of(&self, asset: &AssetId) -> Result<&AssetCost> {
        self.per_asset
            .get(asset)
            .ok_or_else(|| Error::Validation(format!("no cost profile for {asset}")))
    }
}

pub const DEFAULT_MAX_GAS_FRACTION: f64 = 0.01;
pub const DEFAULT_MAX_SLIPPAGE: f64 = 0.005;

/// Fractional slippage of a trade of size `x` against pool depth `d`,
/// constant-product approximation `x / (d + x)`.
pub fn slippage_fraction(notional: Cents, pool_depth: Cents) -> f64 {
    let x = notional.0 as f64;
    let d = pool_depth.0 as f64;
    x / (d + x)
}

/// Dollar slippage cost of a trade: `x^2 / (d + x)`, unrounded.
pub fn slippage_cost_usd(notional_usd: f64, pool_depth_usd: f64) -> f64 {
    notional_usd * notional_usd / (pool_depth_usd + notional_usd)
}

/// Min-max trade sizes per asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeBound {
    pub min_trade: Cents,
    pub max_trade: Cents,
    /// Set when `min_trade > max_trade`: the asset cannot trade this cycle.
    pub untradeable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeBounds {
    pub per_asset: BTreeMap<AssetId, TradeBound>,
}

/// Derives bounds from the cost model:
/// `min = gas / max_gas_fraction`, and `max` solves
/// `slippage(x) = max_slippage`, i.e. `x = s * depth / (1 - s)`.
pub fn trade_bounds(cost: &CostModel) -> Result<TradeBounds> {
    cost.validate()?;
    let mut per_asset = BTreeMap::new();
    for (asset, c) in &cost.per_asset {
        let min_trade = Cents((c.gas_fee.0 as f64 / cost.max_gas_fraction).round() as i64);
        let max_trade = Cents(
            (cost.max_slippage * c.pool_depth.0 as f64 / (1.0 - cost.max_slippage)).round() as i64,
        );
        per_asset.insert(
            asset.clone(),
            TradeBound { min_trade, max_trade, untradeable: min_trade > max_trade },
        );
    }
    Ok(TradeBounds { per_asset })
}

/// Assets whose weight drift exceeds the no-trade band.
pub fn no_trade_filter(
    current: &WeightVector,
    target: &WeightVector,
    band: f64,
) -> Result<BTreeSet<AssetId>> {
    if band < 0.0 {
        return Err(Error::Validation(format!("band {band} must be non-negative")));
    }
    let mut actionable = BTreeSet::new();
    for (i, asset) in target.assets.iter().enumerate() {
        let cur = current.get(asset).unwrap_or(0.0);
        if (cur - target.weights[i]).abs() > band {
            actionable.insert(asset.clone());
        }
    }
    Ok(actionable)
}

pub const DEFAULT_NO_TRADE_BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

/// One sized order of the plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeOrder {
    pub asset: AssetId,
    pub side: Side,
    #[serde(rename = "notional_usd", with = "usd_cents")]
    pub notional: Cents,
    #[serde(rename = "gas_usd", with = "usd_cents")]
    pub gas: Cents,
    #[serde(rename = "slippage_usd", with = "usd_cents")]
    pub slippage: Cents,
    pub seq: u32,
}

impl TradeOrder {
    pub fn cost(&self) -> Cents {
        self.gas + self.slippage
    }
}

/// Ordered orders plus whatever flow could not be placed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradePlan {
    pub orders: Vec<TradeOrder>,
    #[serde(rename = "unallocated_usd", with = "usd_cents")]
    pub unallocated: Cents,
    #[serde(rename = "total_cost_usd", with = "usd_cents")]
    pub total_cost: Cents,
}

impl TradePlan {
    pub fn empty() -> TradePlan {
        TradePlan { orders: Vec::new(), unallocated: Cents::ZERO, total_cost: Cents::ZERO }
    }

    /// Signed sum of notionals: buys positive, sells negative.
    pub fn net_placed(&self) -> Cents {
        self.orders
            .iter()
            .map(|o| match o.side {
                Side::Buy => o.notional,
                Side::Sell => -o.notional,
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<TradePlan> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Serde adapter storing cents as a USD decimal in JSON.
pub(crate) mod usd_cents {
    use crate::money::Cents;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &Cents, s: S) -> std::result::Result<S::Ok, S::Error> {
        c.to_usd().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Cents, D::Error> {
        let usd = f64::deserialize(d)?;
        if !usd.is_finite() || usd.abs() > 9.0e13 {
            return Err(serde::de::Error::custom(format!("usd amount {usd} out of range")));
        }
        Ok(Cents::from_usd(usd))
    }
}

/// Distributes a net flow over actionable assets in the waterfall
/// round-robin order.
///
/// Buys (`net_flow > 0`) visit under-capacity assets by descending headroom;
/// redemptions (`net_flow < 0`) visit over-capacity assets by descending
/// excess. Ties break on the symbol. Each visit places
/// `min(max_trade, remaining headroom, remaining flow)` and an asset is
/// skipped once its placeable remainder drops under its minimum trade size.
pub fn waterfall_round_robin(
    capacities: &[AssetCapacity],
    bounds: &TradeBounds,
    actionable: &BTreeSet<AssetId>,
    net_flow: Cents,
    cost: &CostModel,
) -> Result<TradePlan> {
    if net_flow.is_zero() {
        return Ok(TradePlan::empty());
    }
    let buying = net_flow.0 > 0;
    let side = if buying { Side::Buy } else { Side::Sell };

    // fixed circular visit order: largest need first, symbol breaks ties
    let mut lane: Vec<(AssetId, Cents)> = capacities
        .iter()
        .filter(|c| actionable.contains(&c.asset))
        .filter_map(|c| {
            let need = if buying { c.headroom() } else { -c.headroom() };
            (need.0 > 0).then(|| (c.asset.clone(), need))
        })
        .filter(|(asset, _)| bounds.per_asset.get(asset).is_some_and(|b| !b.untradeable))
        .collect();
    lane.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut remaining_flow = net_flow.abs();
    let mut orders: Vec<TradeOrder> = Vec::new();
    let mut total_cost = Cents::ZERO;
    let mut seq: u32 = 0;
    loop {
        let mut placed_this_cycle = false;
        for (asset, need) in lane.iter_mut() {
            if remaining_flow.is_zero() {
                break;
            }
            if need.is_zero() {
                continue;
            }
            let bound = &bounds.per_asset[asset];
            let chunk = bound.max_trade.min(*need).min(remaining_flow);
            if chunk < bound.min_trade || chunk.0 <= 0 {
                continue;
            }
            let c = cost.cost_of(asset)?;
            let slippage = chunk.mul_frac(slippage_fraction(chunk, c.pool_depth));
            orders.push(TradeOrder {
                asset: asset.clone(),
                side,
                notional: chunk,
                gas: c.gas_fee,
                slippage,
                seq,
            });
            seq += 1;
            total_cost += c.gas_fee + slippage;
            *need -= chunk;
            remaining_flow -= chunk;
            placed_this_cycle = true;
        }
        if remaining_flow.is_zero() || !placed_this_cycle {
            break;
        }
    }

    Ok(TradePlan { orders, unallocated: remaining_flow, total_cost })
}

/// A self-contained rebalance request as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRequest {
    /// Target weight per symbol; must sum to 1.
    pub targets: BTreeMap<String, f64>,
    /// Marked-to-market holding per symbol in USD.
    #[serde(default)]
    pub current_usd: BTreeMap<String, f64>,
    pub tvl_usd: f64,
    pub net_flow_usd: f64,
    #[serde(default = "default_band")]
    pub band: f64,
    /// Per-symbol (gas_usd, pool_depth_usd).
    pub cost_per_asset: BTreeMap<String, (f64, f64)>,
    #[serde(default = "default_gas_fraction")]
    pub max_gas_fraction: f64,
    #[serde(default = "default_slippage")]
    pub max_slippage: f64,
}

fn default_band() -> f64 {
    DEFAULT_NO_TRADE_BAND
}
fn default_gas_fraction() -> f64 {
    DEFAULT_MAX_GAS_FRACTION
}
fn default_slippage() -> f64 {
    DEFAULT_MAX_SLIPPAGE
}

impl RebalanceRequest {
    /// Parses a request document; fuzz entry point.
    pub fn from_json(bytes: &[u8]) -> Result<RebalanceRequest> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

const MAX_USD: f64 = 9.0e13;

fn checked_usd(label: &str, v: f64) -> Result<Cents> {
    if !v.is_finite() || v.abs() > MAX_USD {
        return Err(Error::Validation(format!("{label} amount {v} out of range")));
    }
    Ok(Cents::from_usd(v))
}

/// Runs the full planning pipeline for one request: bounds from the cost
/// model, the no-trade filter, capacities, then the waterfall.
pub fn plan_request(req: &RebalanceRequest) -> Result<TradePlan> {
    let mut assets = Vec::new();
    let mut weights = Vec::new();
    for (symbol, w) in &req.targets {
        if !w.is_finite() {
            return Err(Error::Validation(format!("target weight for {symbol} must be finite")));
        }
        assets.push(AssetId::new(symbol)?);
        weights.push(*w);
    }
    let targets = WeightVector::new(assets.clone(), weights)?;
    let tvl = checked_usd("tvl", req.tvl_usd)?;
    let net_flow = checked_usd("net_flow", req.net_flow_usd)?;
    let current: BTreeMap<AssetId, Cents> = req
        .current_usd
        .iter()
        .map(|(s, v)| Ok((AssetId::new(s)?, checked_usd(s, *v)?)))
        .collect::<Result<_>>()?;
    let cost = CostModel {
        per_asset: req
            .cost_per_asset
            .iter()
            .map(|(s, (gas, depth))| {
                Ok((
                    AssetId::new(s)?,
                    AssetCost { gas_fee: checked_usd(s, *gas)?, pool_depth: checked_usd(s, *depth)? },
                ))
            })
            .collect::<Result<_>>()?,
        max_gas_fraction: req.max_gas_fraction,
        max_slippage: req.max_slippage,
    };
    for asset in &assets {
        cost.cost_of(asset)?;
    }
    let bounds = trade_bounds(&cost)?;
    let base = tvl + net_flow;
    if base.0 <= 0 {
        return Err(Error::Validation("post-flow TVL must be positive".into()));
    }
    let current_w = WeightVector {
        assets: assets.clone(),
        weights: assets
            .iter()
            .map(|a| current.get(a).copied().unwrap_or(Cents::ZERO).0 as f64 / base.0 as f64)
            .collect(),
    };
    let actionable = no_trade_filter(&current_w, &targets, req.band)?;
    let capacities = asset_capacities(&targets, tvl, net_flow, &current)?;
    waterfall_round_robin(&capacities, &bounds, &actionable, net_flow, &cost)
}

/// Recomputes the plan's total execution cost from the cost model.
pub fn estimate_plan_cost(plan: &TradePlan, cost: &CostModel) -> Result<Cents> {
    let mut total = Cents::ZERO;
    for order in &plan.orders {
        let c = cost.cost_of(&order.asset)?;
        total +=
            c.gas_fee + order.notional.mul_frac(slippage_fraction(order.notional, c.pool_depth));
    }
    Ok(total)
}

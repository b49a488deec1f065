//! Per-network portfolios, global aggregation with a single cross-network
//! fund price, and bridge transfer planning under capacity constraints.
//!
//! The global unit price is combined TVL over combined token supply, so a
//! fund token bought on any network carries the same exposure. Transfers
//! between networks are planned greedily, largest deficit first, each leg
//! bounded by its bridge's per-epoch capacity and a minimum economic size
//! derived from the bridge fee.

use crate::error::{Error, Result};
use crate::marketdata::AssetId;
use crate::money::{apportion, Cents};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One network's slice of the fund.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPortfolio {
    pub network_id: String,
    /// USD value held per asset on this network.
    pub holdings: BTreeMap<AssetId, Cents>,
    pub tokens_issued: f64,
    /// Flat gas fee charged for transactions on this network.
    pub gas_fee: Cents,
}

impl NetworkPortfolio {
    pub fn tvl(&self) -> Cents {
        self.holdings.values().copied().sum()
    }
}

/// Aggregation of every network portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPortfolio {
    pub networks: Vec<String>,
    pub total_tvl: Cents,
    pub total_tokens: f64,
    /// `total_tvl / total_tokens`.
    pub unit_price: f64,
    /// Global weight per asset across all networks.
    pub weights: BTreeMap<AssetId, f64>,
}

/// Sums TVLs and token supplies into the global view.
pub fn aggregate_global(networks: &[NetworkPortfolio]) -> Result<GlobalPortfolio> {
    if networks.is_empty() {
        return Err(Error::Validation("need at least one network".into()));
    }
    let mut ids: Vec<String> = networks.iter().map(|n| n.network_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != networks.len() {
        return Err(Error::Validation("duplicate network ids".into()));
    }
    let total_tvl: Cents = networks.iter().map(|n| n.tvl()).sum();
    let total_tokens: f64 = networks.iter().map(|n| n.tokens_issued).sum();
    if total_tokens <= 0.0 {
        return Err(Error::Validation("global unit price undefined: no tokens issued".into()));
    }
    let mut by_asset: BTreeMap<AssetId, Cents> = BTreeMap::new();
    for n in networks {
        for (asset, value) in &n.holdings {
            *by_asset.entry(asset.clone()).or_insert(Cents::ZERO) += *value;
        }
    }
    let weights = by_asset
        .into_iter()
        .map(|(asset, v)| (asset, if total_tvl.0 != 0 { v.0 as f64 / total_tvl.0 as f64 } else { 0.0 }))
        .collect();
    Ok(GlobalPortfolio {
        networks: ids,
        total_tvl,
        total_tokens,
        unit_price: total_tvl.to_usd() / total_tokens,
        weights,
    })
}

/// A directed bridge between two networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeLink {
    pub from_network: String,
    pub to_network: String,
    /// Most value the bridge may carry this epoch.
    pub capacity: Cents,
    /// Flat fee per transfer.
    pub fee: Cents,
}

/// One planned transfer; `received = sent - fee`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from_network: String,
    pub to_network: String,
    #[serde(rename = "sent_usd", with = "crate::rebalancer::usd_cents")]
    pub sent: Cents,
    #[serde(rename = "fee_usd", with = "crate::rebalancer::usd_cents")]
    pub fee: Cents,
    #[serde(rename = "received_usd", with = "crate::rebalancer::usd_cents")]
    pub received: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgePlan {
    pub transfers: Vec<Transfer>,
    /// Deficits that could not be filled this epoch, by network.
    pub residual_deficits: BTreeMap<String, Cents>,
    /// Deficit networks with no inbound bridge at all.
    pub unreachable: Vec<String>,
}

/// Plans transfers toward target exposure fractions.
///
/// Deficit networks are served largest first, drawing from the largest
/// connected surplus; each leg is clamped by remaining link capacity and
/// skipped entirely below the minimum economic size `fee / max_gas_fraction`.
pub fn plan_bridge_transfers(
    targets: &BTreeMap<String, f64>,
    current_tvls: &BTreeMap<String, Cents>,
    links: &[BridgeLink],
    max_gas_fraction: f64,
) -> Result<BridgePlan> {
    if !(max_gas_fraction > 0.0 && max_gas_fraction < 1.0) {
        return Err(Error::Validation("max_gas_fraction must be in (0, 1)".into()));
    }
    if targets.keys().collect::<Vec<_>>() != current_tvls.keys().collect::<Vec<_>>() {
        return Err(Error::Validation("targets and TVLs must cover the same networks".into()));
    }
    let tsum: f64 = targets.values().sum();
    if !((tsum - 1.0).abs() <= 1e-9) {
        return Err(Error::Validation(format!("target exposures sum to {tsum}, expected 1")));
    }
    if targets.values().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Validation("target exposures must be finite and non-negative".into()));
    }
    let total: Cents = current_tvls.values().copied().sum();
    let ids: Vec<&String> = targets.keys().collect();
    let fracs: Vec<f64> = ids.iter().map(|id| targets[*id]).collect();
    let target_cents = apportion(total, &fracs);

    let mut deficits: Vec<(String, Cents)> = Vec::new();
    let mut surpluses: BTreeMap<String, Cents> = BTreeMap::new();
    for (id, target) in ids.iter().zip(target_cents) {
        let diff = target - current_tvls[*id];
        if diff.0 > 0 {
            deficits.push(((*id).clone(), diff));
        } else if diff.0 < 0 {
            surpluses.insert((*id).clone(), -diff);
        }
    }
    deficits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut remaining_capacity: BTreeMap<(String, String), Cents> = BTreeMap::new();
    let mut link_fee: BTreeMap<(String, String), Cents> = BTreeMap::new();
    for l in links {
        if l.capacity.0 < 0 || l.fee.0 < 0 {
            return Err(Error::Validation("link capacity and fee cannot be negative".into()));
        }
        let key = (l.from_network.clone(), l.to_network.clone());
        *remaining_capacity.entry(key.clone()).or_insert(Cents::ZERO) += l.capacity;
        link_fee.entry(key).or_insert(l.fee);
    }

    let mut transfers = Vec::new();
    let mut residual_deficits = BTreeMap::new();
    let mut unreachable = Vec::new();
    for (deficit_net, mut deficit) in deficits {
        let has_inbound = links.iter().any(|l| l.to_network == deficit_net);
        if !has_inbound {
            unreachable.push(deficit_net.clone());
            residual_deficits.insert(deficit_net, deficit);
            continue;
        }
        while deficit.0 > 0 {
            // largest connected surplus first, id on ties
            let source = surpluses
                .iter()
                .filter(|(s, amount)| {
                    amount.0 > 0
                        && remaining_capacity
                            .get(&((*s).clone(), deficit_net.clone()))
                            .is_some_and(|c| c.0 > 0)
                })
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(s, _)| s.clone());
            let Some(src) = source else { break };
            let key = (src.clone(), deficit_net.clone());
            let fee = link_fee[&key];
            let min_size = Cents((fee.0 as f64 / max_gas_fraction).round() as i64).max(Cents(1));
            let cap = remaining_capacity[&key];
            let surplus = surpluses[&src];
            // sending deficit + fee lands exactly the deficit
            let sent = (deficit + fee).min(cap).min(surplus);
            if sent < min_size || sent <= fee {
                // economically meaningless leg; close the lane
                remaining_capacity.insert(key, Cents::ZERO);
                continue;
            }
            let received = sent - fee;
            transfers.push(Transfer {
                from_network: src.clone(),
                to_network: deficit_net.clone(),
                sent,
                fee,
                received,
            });
            *surpluses.get_mut(&src).unwrap() -= sent;
            *remaining_capacity.get_mut(&key).unwrap() -= sent;
            deficit -= received;
        }
        if deficit.0 > 0 {
            residual_deficits.insert(deficit_net, deficit);
        }
    }
    Ok(BridgePlan { transfers, residual_deficits, unreachable })
}

/// Network configuration file: one entry per network with its outbound links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfigEntry {
    pub network_id: String,
    #[serde(rename = "gas_fee_usd", with = "crate::rebalancer::usd_cents")]
    pub gas_fee: Cents,
    #[serde(default)]
    pub links: Vec<NetworkLinkEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLinkEntry {
    pub to: String,
    #[serde(rename = "capacity_usd", with = "crate::rebalancer::usd_cents")]
    pub capacity: Cents,
    #[serde(rename = "fee_usd", with = "crate::rebalancer::usd_cents")]
    pub fee: Cents,
}

/// A bridge-planning request as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgePlanRequest {
    pub networks: Vec<NetworkConfigEntry>,
    /// Target exposure fraction per network; must sum to 1.
    pub targets: BTreeMap<String, f64>,
    pub current_tvl_usd: BTreeMap<String, f64>,
    #[serde(default = "default_gas_fraction")]
    pub max_gas_fraction: f64,
}

fn default_gas_fraction() -> f64 {
    crate::rebalancer::DEFAULT_MAX_GAS_FRACTION
}

impl BridgePlanRequest {
    pub fn from_json(bytes: &[u8]) -> Result<BridgePlanRequest> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Runs the planner for a request document.
pub fn plan_from_request(req: &BridgePlanRequest) -> Result<BridgePlan> {
    let mut seen = std::collections::BTreeSet::new();
    for e in &req.networks {
        if !seen.insert(&e.network_id) {
            return Err(Error::Validation(format!("duplicate network {}", e.network_id)));
        }
    }
    let links = links_from_config(&req.networks);
    let tvls: BTreeMap<String, Cents> = req
        .current_tvl_usd
        .iter()
        .map(|(k, v)| {
            if !v.is_finite() || v.abs() > 9.0e13 {
                return Err(Error::Validation(format!("{k}: TVL {v} out of range")));
            }
            Ok((k.clone(), Cents::from_usd(*v)))
        })
        .collect::<Result<_>>()?;
    plan_bridge_transfers(&req.targets, &tvls, &links, req.max_gas_fraction)
}

/// Parses the network config JSON; fuzz entry point.
pub fn parse_network_config(bytes: &[u8]) -> Result<Vec<NetworkConfigEntry>> {
    let entries: Vec<NetworkConfigEntry> = serde_json::from_slice(bytes)?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if e.network_id.is_empty() {
            return Err(Error::Validation("network_id must be non-empty".into()));
        }
        if !seen.insert(&e.network_id) {
            return Err(Error::Validation(format!("duplicate network {}", e.network_id)));
        }
    }
    Ok(entries)
}

/// Expands config entries into directed [`BridgeLink`]s.
pub fn links_from_config(entries: &[NetworkConfigEntry]) -> Vec<BridgeLink> {
    entries
        .iter()
        .flat_map(|e| {
            e.links.iter().map(|l| BridgeLink {
                from_network: e.network_id.clone(),
                to_network: l.to.clone(),
                capacity: l.capacity,
                fee: l.fee,
            })
        })
        .collect()
}

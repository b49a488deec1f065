//! Performance-fee crystallization against a high-water mark, the
//! trickle-effect reward pot, and staking-based reward eligibility.
//!
//! Fees are charged only on unit-price gains above the high-water mark, so
//! investors never pay twice for the same ground regained. A share of each
//! fee feeds a community pot that pays out a fixed fraction per epoch.

use crate::error::{Error, Result};
use crate::money::Cents;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub const DEFAULT_FEE_RATE: f64 = 0.20;
pub const DEFAULT_COMMUNITY_SHARE: f64 = 0.50;
pub const DEFAULT_PAYOUT_FRACTION: f64 = 0.50;

/// High-water mark state for one fund.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighWaterMark {
    /// Highest unit price at which fees were last crystallized.
    pub hwm_unit_price: f64,
    /// Fraction of profit charged as performance fee.
    pub fee_rate: f64,
    /// Fraction of each fee credited to the community pot.
    pub community_share: f64,
}

impl HighWaterMark {
    pub fn new(initial_unit_price: f64, fee_rate: f64, community_share: f64) -> Result<Self> {
        if !(initial_unit_price > 0.0) {
            return Err(Error::Validation("initial unit price must be positive".into()));
        }
        if !(0.0..=1.0).contains(&fee_rate) || !(0.0..=1.0).contains(&community_share) {
            return Err(Error::Validation("fee rate and community share must be in [0, 1]".into()));
        }
        Ok(HighWaterMark { hwm_unit_price: initial_unit_price, fee_rate, community_share })
    }
}

/// Outcome of one crystallization attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crystallization {
    pub fee: Cents,
    pub pot_credit: Cents,
}

/// Charges `fee_rate * (price - hwm) * supply` when the unit price exceeds
/// the mark, then raises the mark to the new price. Below the mark nothing
/// happens.
pub fn crystallize_fees(
    hwm: &mut HighWaterMark,
    new_unit_price: f64,
    token_supply: f64,
) -> Result<Crystallization> {
    if !(new_unit_price > 0.0) {
        return Err(Error::Validation(format!("unit price {new_unit_price} must be positive")));
    }
    if token_supply < 0.0 {
        return Err(Error::Validation("token supply cannot be negative".into()));
    }
    if new_unit_price <= hwm.hwm_unit_price {
        return Ok(Crystallization { fee: Cents::ZERO, pot_credit: Cents::ZERO });
    }
    let profit = Cents::from_usd((new_unit_price - hwm.hwm_unit_price) * token_supply);
    let fee = profit.mul_frac(hwm.fee_rate);
    let pot_credit = fee.mul_frac(hwm.community_share);
    hwm.hwm_unit_price = new_unit_price;
    Ok(Crystallization { fee, pot_credit })
}

/// Community reward pot with a geometric payout schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardPot {
    pub balance: Cents,
    /// Fraction of the above-threshold balance released per epoch.
    pub payout_fraction: f64,
    /// Balance kept back; only the excess is paid out.
    pub distribution_threshold: Cents,
}

impl RewardPot {
    pub fn new(payout_fraction: f64, distribution_threshold: Cents) -> Result<Self> {
        if !(0.0..=1.0).contains(&payout_fraction) {
            return Err(Error::Validation(format!(
                "payout fraction {payout_fraction} must be in [0, 1]"
            )));
        }
        if distribution_threshold.0 < 0 {
            return Err(Error::Validation("distribution threshold cannot be negative".into()));
        }
        Ok(RewardPot { balance: Cents::ZERO, payout_fraction, distribution_threshold })
    }
}

/// Adds `inflow` to the pot and releases the epoch payout.
pub fn trickle_payout(pot: &mut RewardPot, inflow: Cents) -> Result<Cents> {
    if inflow.0 < 0 {
        return Err(Error::Validation("pot inflow cannot be negative".into()));
    }
    pot.balance += inflow;
    if pot.balance <= pot.distribution_threshold {
        return Ok(Cents::ZERO);
    }
    let payout = (pot.balance - pot.distribution_threshold).mul_frac(pot.payout_fraction);
    pot.balance -= payout;
    Ok(payout)
}

/// Staked tokens backing a reward claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakePosition {
    pub investor_id: String,
    pub project_tokens_staked: f64,
    pub fund_tokens_staked: f64,
    pub stake_start: NaiveDate,
}

/// Ratio gate for claiming the full reward share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityPolicy {
    /// Required project tokens per fund token staked (1:1 -> 1.0, 2:3 -> 2/3).
    pub required_ratio: f64,
    /// Holding at least this many project tokens waives the ratio.
    pub whale_minimum_project_tokens: f64,
}

impl Default for EligibilityPolicy {
    fn default() -> Self {
        EligibilityPolicy { required_ratio: 1.0, whale_minimum_project_tokens: f64::INFINITY }
    }
}

/// Fraction of the full reward share this position is entitled to.
///
/// Zero without project tokens, one at or above the required ratio (or the
/// whale minimum), linearly prorated in between.
pub fn eligibility_share(position: &StakePosition, policy: &EligibilityPolicy) -> Result<f64> {
    if policy.required_ratio <= 0.0 {
        return Err(Error::Validation("required ratio must be positive".into()));
    }
    if position.project_tokens_staked < 0.0 || position.fund_tokens_staked < 0.0 {
        return Err(Error::Validation("staked token amounts cannot be negative".into()));
    }
    if position.project_tokens_staked == 0.0 {
        return Ok(0.0);
    }
    if position.project_tokens_staked >= policy.whale_minimum_project_tokens {
        return Ok(1.0);
    }
    if position.fund_tokens_staked == 0.0 {
        // rewards accrue to fund stakers only
        return Ok(0.0);
    }
    Ok((position.project_tokens_staked / (policy.required_ratio * position.fund_tokens_staked))
        .min(1.0))
}

/// One investor's reward for an epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reward {
    pub investor_id: String,
    pub amount: Cents,
}

/// Splits a payout pro-rata over `share * fund_tokens_staked`.
///
/// Each reward is rounded down; whatever rounding leaves over is returned so
/// the caller can restore it to the pot. With no eligible stakers the whole
/// payout comes back.
pub fn distribute_rewards(
    payout: Cents,
    positions: &[(StakePosition, f64)],
) -> Result<(Vec<Reward>, Cents)> {
    if payout.0 < 0 {
        return Err(Error::Validation("payout cannot be negative".into()));
    }
    let weights: Vec<f64> =
        positions.iter().map(|(p, share)| share * p.fund_tokens_staked).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Ok((Vec::new(), payout));
    }
    let mut rewards = Vec::new();
    let mut distributed = Cents::ZERO;
    for ((p, _), w) in positions.iter().zip(&weights) {
        let amount = Cents((payout.0 as f64 * w / total).floor() as i64);
        distributed += amount;
        if amount.0 > 0 {
            rewards.push(Reward { investor_id: p.investor_id.clone(), amount });
        }
    }
    Ok((rewards, payout - distributed))
}

/// A line of the append-only fee/reward event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeShareEvent {
    pub epoch: u32,
    pub fund: String,
    pub event: FeeShareEventKind,
    #[serde(rename = "amount_usd", with = "crate::rebalancer::usd_cents")]
    pub amount: Cents,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub investor_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeShareEventKind {
    Fee,
    PotCredit,
    Payout,
    Reward,
    Burn,
}

/// Serializes events as JSON lines.
pub fn events_to_jsonl(events: &[FeeShareEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines event log; the fuzz entry point for this format.
pub fn parse_events_jsonl(bytes: &[u8]) -> Result<Vec<FeeShareEvent>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not utf-8: {e}") })?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: FeeShareEvent = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}

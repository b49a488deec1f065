//! Custody state machine guarding withdrawals.
//!
//! Operators authenticate with a reverse SHA-256 hash chain: the safe house
//! holds an anchor `H^n(seed)` and each password reveals the preimage of the
//! current anchor, which then becomes the next anchor. A password therefore
//! both proves identity now and commits the verifier to the next one, which
//! stays sound even when every verification input is public.
//!
//! Any request with a wrong preimage or from an unknown operator locks the
//! safe house until a quorum of operators unlocks it. Requests that merely
//! exceed the per-transaction or daily loss limits are rejected without
//! locking. Every decision lands in an append-only audit log in which each
//! event carries the SHA-256 digest of its predecessor.

use crate::error::{Error, Result};
use crate::money::Cents;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::collections::BTreeMap;
use std::fmt;

/// A 32-byte SHA-256 digest, hex-encoded in logs.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0u8; 32]);

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest32> {
        let bytes = hex::decode(s)
            .map_err(|e| Error::Validation(format!("bad hex digest: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Validation("digest must be 32 bytes".into()))?;
        Ok(Digest32(arr))
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest32::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn sha256(bytes: &[u8]) -> Digest32 {
    let mut h = Sha256::new();
    h.update(bytes);
    Digest32(h.finalize().into())
}

/// Public commitment of one operator's remaining password chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorChain {
    pub operator_id: String,
    /// Hash of the next valid reveal.
    pub anchor: Digest32,
    pub chain_length_remaining: u32,
}

/// `anchor = H^n(seed)`; the operator keeps the seed and reveals
/// `H^(n-1)(seed), H^(n-2)(seed), ...` in order.
pub fn init_operator_chain(operator_id: &str, seed: &[u8; 32], n: u32) -> Result<OperatorChain> {
    if n == 0 {
        return Err(Error::Validation("chain length must be at least 1".into()));
    }
    let mut digest = Digest32(*seed);
    for _ in 0..n {
        digest = sha256(&digest.0);
    }
    Ok(OperatorChain {
        operator_id: operator_id.to_string(),
        anchor: digest,
        chain_length_remaining: n,
    })
}

/// Client-side view of a chain: produces reveals in order. Test and
/// simulation helper; a real operator would derive these offline.
#[derive(Debug, Clone)]
pub struct OperatorSecret {
    pub operator_id: String,
    seed: [u8; 32],
    length: u32,
    used: u32,
}

impl OperatorSecret {
    pub fn new(operator_id: &str, seed: [u8; 32], length: u32) -> OperatorSecret {
        OperatorSecret { operator_id: operator_id.to_string(), seed, length, used: 0 }
    }

    pub fn chain(&self) -> Result<OperatorChain> {
        init_operator_chain(&self.operator_id, &self.seed, self.length)
    }

    /// The next password: `H^(length - used - 1)(seed)`.
    pub fn next_reveal(&mut self) -> Option<[u8; 32]> {
        if self.used >= self.length {
            return None;
        }
        let mut digest = Digest32(self.seed);
        for _ in 0..(self.length - self.used - 1) {
            digest = sha256(&digest.0);
        }
        self.used += 1;
        Some(digest.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Open,
    Locked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditAction {
    Withdraw,
    Deposit,
    Lock,
    Unlock,
    Reject,
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AuditAction::Withdraw => "withdraw",
            AuditAction::Deposit => "deposit",
            AuditAction::Lock => "lock",
            AuditAction::Unlock => "unlock",
            AuditAction::Reject => "reject",
        };
        f.write_str(s)
    }
}

/// One line of the hash-chained audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub sequence: u64,
    pub timestamp: NaiveDate,
    pub operator_id: String,
    pub action: AuditAction,
    #[serde(rename = "amount_usd", with = "crate::rebalancer::usd_cents")]
    pub amount: Cents,
    /// SHA-256 of the presented password, when one was presented.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reveal_digest: Option<Digest32>,
    pub reason: String,
    pub prev_digest: Digest32,
    pub event_digest: Digest32,
}

/// Canonical byte string the event digest commits to.
fn event_preimage(e: &AuditEvent) -> String {
    format!(
        "{}|{}|{}|{}|{}|{}|{}|{}",
        e.sequence,
        e.timestamp,
        e.operator_id,
        e.action,
        e.amount.0,
        e.reveal_digest.map_or_else(|| "-".to_string(), |d| d.to_hex()),
        e.reason,
        e.prev_digest.to_hex()
    )
}

/// Decision returned by [`SafeHouse::request_withdrawal`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WithdrawalDecision {
    Accepted,
    Rejected { reason: RejectReason, locked: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    UnknownOperator,
    HouseLocked,
    ChainExhausted,
    BadReveal,
    PerTxLimit,
    DailyLimit,
}

impl RejectReason {
    fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnknownOperator => "unknown operator",
            RejectReason::HouseLocked => "safe house locked",
            RejectReason::ChainExhausted => "password chain exhausted",
            RejectReason::BadReveal => "reveal does not match anchor",
            RejectReason::PerTxLimit => "amount exceeds per-transaction limit",
            RejectReason::DailyLimit => "amount exceeds daily limit",
        }
    }
}

/// The custody state machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafeHouse {
    pub status: Status,
    pub per_tx_limit: Cents,
    pub daily_limit: Cents,
    pub operators: BTreeMap<String, OperatorChain>,
    pub audit_log: Vec<AuditEvent>,
    withdrawn_by_day: BTreeMap<NaiveDate, Cents>,
}

impl SafeHouse {
    pub fn new(per_tx_limit: Cents, daily_limit: Cents, operators: Vec<OperatorChain>) -> Result<SafeHouse> {
        if per_tx_limit.0 <= 0 || daily_limit.0 <= 0 {
            return Err(Error::Validation("limits must be positive".into()));
        }
        let mut map = BTreeMap::new();
        for op in operators {
            if map.insert(op.operator_id.clone(), op).is_some() {
                return Err(Error::Validation("duplicate operator id".into()));
            }
        }
        Ok(SafeHouse {
            status: Status::Open,
            per_tx_limit,
            daily_limit,
            operators: map,
            audit_log: Vec::new(),
            withdrawn_by_day: BTreeMap::new(),
        })
    }

    fn append_event(
        &mut self,
        timestamp: NaiveDate,
        operator_id: &str,
        action: AuditAction,
        amount: Cents,
        reveal_digest: Option<Digest32>,
        reason: &str,
    ) {
        let prev_digest =
            self.audit_log.last().map_or(Digest32::ZERO, |e| e.event_digest);
        let sequence = self.audit_log.len() as u64 + 1;
        let mut event = AuditEvent {
            sequence,
            timestamp,
            operator_id: operator_id.to_string(),
            action,
            amount,
            reveal_digest,
            reason: reason.to_string(),
            prev_digest,
            event_digest: Digest32::ZERO,
        };
        event.event_digest = sha256(event_preimage(&event).as_bytes());
        self.audit_log.push(event);
    }

    fn lock(&mut self, timestamp: NaiveDate, operator_id: &str, reason: &str) {
        if self.status == Status::Open {
            self.status = Status::Locked;
            self.append_event(timestamp, operator_id, AuditAction::Lock, Cents::ZERO, None, reason);
        }
    }

    /// Records an inbound movement; deposits need no password.
    pub fn record_deposit(&mut self, timestamp: NaiveDate, operator_id: &str, amount: Cents) {
        self.append_event(timestamp, operator_id, AuditAction::Deposit, amount, None, "deposit");
    }

    fn withdrawn_on(&self, day: NaiveDate) -> Cents {
        self.withdrawn_by_day.get(&day).copied().unwrap_or(Cents::ZERO)
    }

    /// Verifies the operator's password and the loss limits, then either
    /// releases the funds or rejects. Identity failures (unknown operator,
    /// wrong preimage) lock the house; limit failures do not.
    pub fn request_withdrawal(
        &mut self,
        timestamp: NaiveDate,
        operator_id: &str,
        amount: Cents,
        reveal: &[u8; 32],
    ) -> Result<WithdrawalDecision> {
        if amount.0 <= 0 {
            return Err(Error::Validation("withdrawal amount must be positive".into()));
        }
        let reveal_digest = sha256(reveal);
        let reject = |this: &mut Self, reason: RejectReason, locked_after: bool| {
            this.append_event(
                timestamp,
                operator_id,
                AuditAction::Reject,
                amount,
                Some(reveal_digest),
                reason.as_str(),
            );
            WithdrawalDecision::Rejected { reason, locked: locked_after }
        };

        if !self.operators.contains_key(operator_id) {
            let decision = reject(self, RejectReason::UnknownOperator, true);
            self.lock(timestamp, operator_id, "unknown operator requested withdrawal");
            return Ok(decision);
        }
        if self.status == Status::Locked {
            return Ok(reject(self, RejectReason::HouseLocked, true));
        }
        let chain = &self.operators[operator_id];
        if chain.chain_length_remaining == 0 {
            return Ok(reject(self, RejectReason::ChainExhausted, false));
        }
        if reveal_digest != chain.anchor {
            let decision = reject(self, RejectReason::BadReveal, true);
            self.lock(timestamp, operator_id, "invalid reveal presented");
            return Ok(decision);
        }
        if amount > self.per_tx_limit {
            return Ok(reject(self, RejectReason::PerTxLimit, false));
        }
        if self.withdrawn_on(timestamp) + amount > self.daily_limit {
            return Ok(reject(self, RejectReason::DailyLimit, false));
        }

        // accepted: the reveal becomes the new anchor
        let chain = self.operators.get_mut(operator_id).expect("operator exists");
        chain.anchor = Digest32(*reveal);
        chain.chain_length_remaining -= 1;
        *self.withdrawn_by_day.entry(timestamp).or_insert(Cents::ZERO) += amount;
        self.append_event(
            timestamp,
            operator_id,
            AuditAction::Withdraw,
            amount,
            Some(reveal_digest),
            "withdrawal",
        );
        Ok(WithdrawalDecision::Accepted)
    }

    /// Reopens a locked house when at least `required` distinct operators
    /// present valid reveals; each counted reveal consumes a chain link.
    pub fn unlock(
        &mut self,
        timestamp: NaiveDate,
        approvals: &[(String, [u8; 32])],
        required: usize,
    ) -> Result<bool> {
        if self.status != Status::Locked {
            return Err(Error::Validation("safe house is not locked".into()));
        }
        if required == 0 {
            return Err(Error::Validation("quorum must be at least 1".into()));
        }
        let mut valid: BTreeMap<String, [u8; 32]> = BTreeMap::new();
        for (op_id, reveal) in approvals {
            if valid.contains_key(op_id) {
                continue; // replayed approvals from one operator count once
            }
            let Some(chain) = self.operators.get(op_id) else { continue };
            if chain.chain_length_remaining > 0 && sha256(reveal) == chain.anchor {
                valid.insert(op_id.clone(), *reveal);
            }
        }
        if valid.len() < required {
            self.append_event(
                timestamp,
                "quorum",
                AuditAction::Reject,
                Cents::ZERO,
                None,
                &format!("unlock quorum not met: {} of {required}", valid.len()),
            );
            return Ok(false);
        }
        for (op_id, reveal) in &valid {
            let chain = self.operators.get_mut(op_id).expect("validated above");
            chain.anchor = Digest32(*reveal);
            chain.chain_length_remaining -= 1;
        }
        self.status = Status::Open;
        let approvers: Vec<&str> = valid.keys().map(|s| s.as_str()).collect();
        self.append_event(
            timestamp,
            "quorum",
            AuditAction::Unlock,
            Cents::ZERO,
            None,
            &format!("unlocked by {}", approvers.join("+")),
        );
        Ok(true)
    }
}

/// Serializes the audit log as JSON lines.
pub fn audit_log_to_jsonl(events: &[AuditEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines audit log without verifying it; fuzz entry point.
pub fn parse_audit_log(bytes: &[u8]) -> Result<Vec<AuditEvent>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not utf-8: {e}") })?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: AuditEvent = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}

/// Replays the hash chain: every digest must recompute and link to its
/// predecessor, with strictly increasing sequence numbers.
pub fn verify_audit_chain(events: &[AuditEvent]) -> Result<()> {
    let mut prev = Digest32::ZERO;
    let mut last_seq = 0u64;
    for (i, e) in events.iter().enumerate() {
        let line = i + 1;
        if e.sequence <= last_seq {
            return Err(Error::Validation(format!(
                "line {line}: sequence {} not increasing (previous {last_seq})",
                e.sequence
            )));
        }
        if e.prev_digest != prev {
            return Err(Error::Validation(format!(
                "line {line}: prev_digest does not match preceding event"
            )));
        }
        let recomputed = sha256(event_preimage(e).as_bytes());
        if recomputed != e.event_digest {
            return Err(Error::Validation(format!(
                "line {line}: event digest mismatch (tampered event)"
            )));
        }
        prev = e.event_digest;
        last_seq = e.sequence;
    }
    Ok(())
}

/// Parses and verifies a serialized audit log in one step.
pub fn verify_audit_log_bytes(bytes: &[u8]) -> Result<usize> {
    let events = parse_audit_log(bytes)?;
    verify_audit_chain(&events)?;
    Ok(events.len())
}

//! Deterministic portfolio risk-management engine for multichain crypto funds.
//!
//! The crate covers the full pipeline from raw daily price data to an
//! auditable backtest: market-data ingestion and return statistics
//! ([`marketdata`]), VVV / MVO / ERC weighting engines ([`weights`]),
//! cost-aware waterfall rebalancing ([`rebalancer`]), Alpha/Beta/Gamma fund
//! construction and the parity line ([`funds`]), high-water-mark fee and
//! trickle-reward accounting ([`feeshare`]), the concentration risk
//! indicator ([`metrics`]), hash-chain-guarded custody ([`safehouse`]),
//! cross-network aggregation and bridge planning ([`multichain`]), and the
//! daily simulation harness ([`backtest`]).
//!
//! All money amounts are integer cents so that conservation checks are
//! exact; statistics are `f64` with documented tolerances.

pub mod backtest;
pub mod error;
pub mod feeshare;
pub mod funds;
pub mod marketdata;
pub mod metrics;
pub mod money;
pub mod multichain;
pub mod rebalancer;
pub mod safehouse;
pub mod synthetic;
pub mod weights;

pub use error::{Error, Result};
pub use money::Cents;

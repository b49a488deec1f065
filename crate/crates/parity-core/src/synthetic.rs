//! Seeded synthetic market data: geometric Brownian motion with
//! regime-switching volatility and an optional scripted crash segment.
//!
//! Deterministic for a fixed spec, so backtests built on it are exactly
//! reproducible.

use crate::marketdata::{AssetId, PriceHistory};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A scripted high-volatility down-drift segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashSpec {
    /// Day index at which the crash starts.
    pub start_day: u32,
    pub length_days: u32,
    /// Daily drift during the crash (e.g. -0.04).
    pub daily_drift: f64,
    /// Daily volatility during the crash.
    pub daily_vol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub assets: u32,
    pub days: u32,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Days between volatility regime switches.
    pub regime_days: u32,
    /// Calm-regime annualized volatility floor; per-asset levels fan out
    /// above this.
    pub base_annual_vol: f64,
    /// Annualized drift of the median asset.
    pub base_annual_drift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crash: Option<CrashSpec>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            assets: 10,
            days: 545,
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            regime_days: 60,
            base_annual_vol: 0.40,
            base_annual_drift: 0.15,
            crash: Some(CrashSpec {
                start_day: 380,
                length_days: 25,
                daily_drift: -0.03,
                daily_vol: 0.08,
            }),
        }
    }
}

/// Generates a full price/market-cap history from the spec.
pub fn generate(spec: &SyntheticSpec) -> PriceHistory {
    assert!(spec.assets >= 1 && spec.days >= 2, "need at least 1 asset and 2 days");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.assets as usize;
    let days = spec.days as usize;

    let assets: Vec<AssetId> = (0..n)
        .map(|i| AssetId::new(&format!("C{i:02}")).expect("valid symbol"))
        .collect();

    // per-asset character: volatility tier, drift tilt, regime phase
    let vol_scale: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>() * 1.5).collect();
    let drift_tilt: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() - 0.4) * 0.3).collect();
    let phase: Vec<u32> = (0..n).map(|_| rng.random_range(0..spec.regime_days.max(1))).collect();
    let start_price: Vec<f64> = (0..n).map(|_| 10.0_f64.powf(rng.random::<f64>() * 3.0)).collect();
    // market caps fan out over three orders of magnitude
    let supply: Vec<f64> = (0..n).map(|_| 10.0_f64.powf(6.0 + rng.random::<f64>() * 3.0)).collect();

    let standard = Normal::new(0.0, 1.0).expect("valid normal");
    let mut close = Vec::with_capacity(days);
    let mut market_cap = Vec::with_capacity(days);
    let mut prices = start_price.clone();
    for day in 0..days {
        if day > 0 {
            for a in 0..n {
                let in_crash = spec.crash.is_some_and(|c| {
                    (day as u32) >= c.start_day && (day as u32) < c.start_day + c.length_days
                });
                let (mu_d, sigma_d) = if in_crash {
                    let c = spec.crash.expect("checked");
                    (c.daily_drift, c.daily_vol * vol_scale[a].sqrt())
                } else {
                    let regime =
                        ((day as u32 + phase[a]) / spec.regime_days.max(1)) % 2;
                    let regime_mult = if regime == 0 { 1.0 } else { 1.8 };
                    let annual_vol = spec.base_annual_vol * vol_scale[a] * regime_mult;
                    let sigma_d = annual_vol / 365.0_f64.sqrt();
                    let mu_d = (spec.base_annual_drift + drift_tilt[a]) / 365.0;
                    (mu_d, sigma_d)
                };
                let z: f64 = standard.sample(&mut rng);
                prices[a] *= (mu_d - 0.5 * sigma_d * sigma_d + sigma_d * z).exp();
            }
        }
        close.push(prices.clone());
        market_cap.push(prices.iter().zip(&supply).map(|(p, s)| p * s).collect());
    }

    let dates: Vec<NaiveDate> =
        (0..days).map(|i| spec.start_date + chrono::Days::new(i as u64)).collect();
    PriceHistory { assets, dates, close, market_cap }
}

/// Renders a history in the ingestion CSV schema.
pub fn to_csv(history: &PriceHistory) -> String {
    let mut out = String::from("date,asset,close_usd,market_cap_usd\n");
    for (t, date) in history.dates.iter().enumerate() {
        for (a, asset) in history.assets.iter().enumerate() {
            out.push_str(&format!(
                "{date},{asset},{:.8},{:.2}\n",
                history.close[t][a], history.market_cap[t][a]
            ));
        }
    }
    out
}

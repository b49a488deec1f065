//! Backtest config parsing and validation on arbitrary JSON bytes.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::backtest::BacktestConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = BacktestConfig::from_json(data) {
        // a validated config must re-serialize and re-validate cleanly
        let echoed = serde_json::to_vec(&config).unwrap();
        BacktestConfig::from_json(&echoed).unwrap();
    }
});

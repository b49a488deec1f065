//! Trade-plan JSON decoding; valid plans must re-encode losslessly.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::rebalancer::TradePlan;

fuzz_target!(|data: &[u8]| {
    if let Ok(plan) = TradePlan::from_json(data) {
        let json = plan.to_json();
        let again = TradePlan::from_json(json.as_bytes()).unwrap();
        assert_eq!(plan, again);
    }
});

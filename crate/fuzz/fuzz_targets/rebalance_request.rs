//! Rebalance request parsing and the full planning pipeline behind it.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::rebalancer::{plan_request, RebalanceRequest};

fuzz_target!(|data: &[u8]| {
    if let Ok(request) = RebalanceRequest::from_json(data) {
        let _ = plan_request(&request);
    }
});

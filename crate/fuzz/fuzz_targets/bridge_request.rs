//! Bridge-plan request parsing and planning on arbitrary JSON bytes.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::multichain::{plan_from_request, BridgePlanRequest};

fuzz_target!(|data: &[u8]| {
    if let Ok(request) = BridgePlanRequest::from_json(data) {
        let _ = plan_from_request(&request);
    }
});

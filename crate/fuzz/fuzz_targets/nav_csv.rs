//! NAV CSV parsing plus the interval report on whatever parses.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::metrics::{parse_nav_csv, performance_report, REPORT_INTERVALS};
use std::collections::BTreeMap;

fuzz_target!(|data: &[u8]| {
    if let Ok(series) = parse_nav_csv(data) {
        let _ = performance_report(&series, &BTreeMap::new(), 0.10, &REPORT_INTERVALS);
    }
});

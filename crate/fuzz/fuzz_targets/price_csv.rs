//! The price-history CSV parser must never panic on arbitrary bytes.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::marketdata::{parse_price_csv, IngestOptions};

fuzz_target!(|data: &[u8]| {
    let _ = parse_price_csv(data, None, &IngestOptions::default());
    // a narrow explicit range exercises the range-clipping path
    let from = chrono::NaiveDate::from_ymd_opt(2021, 1, 2).unwrap();
    let to = chrono::NaiveDate::from_ymd_opt(2021, 1, 9).unwrap();
    let _ = parse_price_csv(data, Some((from, to)), &IngestOptions { max_gap_days: 1 });
});

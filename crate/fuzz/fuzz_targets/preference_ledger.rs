//! Preference-ledger JSONL parsing on arbitrary bytes.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::funds::{parse_preference_ledger, preference_ledger_to_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_preference_ledger(data) {
        let text = preference_ledger_to_jsonl(&records);
        parse_preference_ledger(text.as_bytes()).unwrap();
    }
});

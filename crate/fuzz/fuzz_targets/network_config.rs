//! Network config parsing and link expansion on arbitrary JSON bytes.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::multichain::{links_from_config, parse_network_config};

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = parse_network_config(data) {
        let _ = links_from_config(&entries);
    }
});

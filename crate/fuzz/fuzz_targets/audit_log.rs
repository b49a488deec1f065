//! Audit-log parsing and hash-chain verification on arbitrary bytes.
#![no_main]

use libfuzzer_sys::fuzz_target;
use parity_core::safehouse::verify_audit_log_bytes;

fuzz_target!(|data: &[u8]| {
    let _ = verify_audit_log_bytes(data);
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for tok in domsel::corpus::tokenize(text) {
            assert!(!tok.is_empty());
            assert!(tok.chars().all(char::is_alphanumeric));
        }
    }
});

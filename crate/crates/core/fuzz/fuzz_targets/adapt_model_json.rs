#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = domsel::adapt::AdaptModel::from_json(text) {
            let _ = domsel::adapt::AdaptModel::from_json(&m.to_json()).expect("own output parses");
        }
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(lm) = domsel::ngram_lm::TrigramLm::from_text(text) {
            let _ = domsel::ngram_lm::TrigramLm::from_text(&lm.to_text()).expect("own output parses");
        }
    }
});

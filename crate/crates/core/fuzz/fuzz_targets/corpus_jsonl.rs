#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let threshold = text.contains("\"score\"").then_some(3.0);
        if let Ok(loaded) = domsel::corpus::parse_jsonl("fuzz", text, threshold) {
            let again = domsel::corpus::parse_jsonl("fuzz", &loaded.corpus.to_jsonl(), None).expect("own output parses");
            assert_eq!(again.corpus.len(), loaded.corpus.len());
        }
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = domsel::embed::EmbeddingTable::from_word2vec("fuzz", text) {
            let _ = domsel::embed::EmbeddingTable::from_word2vec("fuzz", &t.to_word2vec()).expect("own output parses");
        }
    }
});

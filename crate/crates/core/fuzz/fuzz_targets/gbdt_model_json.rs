#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = domsel::meta::GbdtModel::from_json(text) {
            let x = vec![0.5; m.feature_names.len()];
            let p = m.predict_proba(&x);
            assert!((0.0..=1.0).contains(&p) || p.is_nan());
        }
    }
});

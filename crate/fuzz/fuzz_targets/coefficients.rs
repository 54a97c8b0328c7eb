#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = lqagg::io::parse_coefficients(text) {
            assert!(!c.is_empty() && c.iter().all(|v| v.is_finite()));
        }
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = lqagg::io::parse_csv_matrix(text) {
            assert!(m.data.iter().all(|v| v.is_finite()));
            let _ = lqagg::io::split_response(&m.data, None);
        }
    }
});

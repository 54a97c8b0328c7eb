#![no_main]

use libfuzzer_sys::fuzz_target;
use lqagg::mixing::{catoni_aggregate, CatoniConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok((mut cands, y)) = lqagg::io::parse_candidates(text) else {
        return;
    };
    cands.clip(1.0);
    let cfg = CatoniConfig::gaussian(0.5, 1.0, 1.0).unwrap();
    if let Ok(w) = catoni_aggregate(&cands, &y, &cfg) {
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
});

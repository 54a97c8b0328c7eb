#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = lqagg::io::parse_experiment(text) {
            let _ = cfg.estimator.build();
            let _ = cfg.generator.prepare(cfg.n.min(64));
        }
    }
});

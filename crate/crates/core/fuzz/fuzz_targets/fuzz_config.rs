#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = coupon_core::config::Config::parse(text) {
            // Typed getters must never panic on hostile values.
            if let Ok(ladder) = cfg.ladder() {
                let _ = cfg.budget(&ladder);
            }
            let _ = cfg.get_f64("p_b");
            let _ = cfg.pid(1.0, 12.0);
        }
    }
});

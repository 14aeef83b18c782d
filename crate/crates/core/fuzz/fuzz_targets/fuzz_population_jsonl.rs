#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(pop) = coupon_core::synthpop::read_population_jsonl(data) {
        // Accepted customers satisfy the invariants the demand model needs.
        for c in pop.customers.iter().take(16) {
            let _ = coupon_core::synthpop::true_purchase(c, 12.0);
            let _ = coupon_core::synthpop::smooth_cvr(c, &pop.ladder, 2.0);
        }
    }
});

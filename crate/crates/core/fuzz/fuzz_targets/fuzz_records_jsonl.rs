#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = coupon_core::cvr::read_records_jsonl(data) {
        let ladder = coupon_core::synthpop::synthetic_ladder();
        // Fitting either rejects the data or yields a usable model.
        if let Ok(model) = coupon_core::cvr::fit(&records, &ladder, 4) {
            let _ = coupon_core::cvr::eval_rows(&model, &records);
        }
    }
});

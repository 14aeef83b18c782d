#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = coupon_core::cvr::read_cvr_matrix_csv(data) {
        // Accepted rows are valid probability vectors; calibration holds.
        for (_, q) in rows.iter().take(16) {
            let fixed = coupon_core::isotonic::calibrate(q).expect("rows in [0,1] calibrate");
            assert!(fixed.is_monotone());
        }
    }
});

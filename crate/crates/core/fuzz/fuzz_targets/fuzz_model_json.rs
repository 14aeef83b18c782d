#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = coupon_core::cvr::CvrModel::from_json_reader(data) {
        // A model that passed validation must predict without panicking.
        let customer = coupon_core::synthpop::Customer {
            id: 1,
            f1: 0.25,
            f2: 1.5,
            show_up_prob: 0.5,
            segment: coupon_core::synthpop::Segment::New,
        };
        let _ = model.predict(&customer);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let ladder = coupon_core::synthpop::synthetic_ladder();
    if let Ok(inst) = coupon_core::dual::Instance::from_csv_reader(data, ladder, 12.0) {
        // A loaded instance must be solvable without panicking.
        let (value, assignment) = coupon_core::dual::dual_objective(&inst, 1.0);
        assert!(value.is_finite());
        assert_eq!(assignment.len(), inst.len());
        let _ = inst.budget_slack(&assignment);
    }
});

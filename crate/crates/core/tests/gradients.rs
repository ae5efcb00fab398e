use dehaze_core::checks::{run_case, CASES};

#[test]
fn every_case_passes_its_threshold() {
    for name in CASES {
        let r = run_case(name).unwrap().unwrap();
        println!(
            "{:<20} max rel error {:.3e} over {} elements",
            r.name, r.report.max_rel_error, r.report.checked
        );
        assert!(r.passed(), "{name}: {:?}", r.report);
    }
}

#[test]
fn unknown_case_is_none() {
    assert!(run_case("conv3d").is_none());
}

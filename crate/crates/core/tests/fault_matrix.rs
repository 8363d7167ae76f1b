use coordsim::fuzz::{fault_matrix, gen_fault_scenario, gen_scenario, gen_seq_gap_scenario, sweep, FuzzParams};

#[test]
fn clean_runs_pass() {
    let p = FuzzParams::default();
    let sum = sweep(0..200, |s| gen_scenario(s, &p));
    assert!(sum.passed(), "{:?}", sum.first_failure);
}

#[test]
fn every_crash_point_is_survived() {
    let p = FuzzParams::default();
    for point in fault_matrix() {
        let sum = sweep(0..200, |s| gen_fault_scenario(s, &p, point));
        assert!(sum.passed(), "{point}: {:?} {:?}", sum.first_failure, sum.errors.first());
    }
}

#[test]
fn sequence_number_queue_breaks_without_atomic_push() {
    let p = FuzzParams::default();
    let sum = sweep(0..500, |s| gen_seq_gap_scenario(s, &p));
    assert!(sum.errors.is_empty(), "{:?}", sum.errors.first());
    assert!(!sum.failures.is_empty());
}

mod common;

use common::{app_notification_counts, wire_duplicates};
use coordsim::fuzz::{gen_duplicate_notification_scenario, run_seed, FuzzParams};

#[test]
fn retried_batches_surface_each_notification_once() {
    let p = FuzzParams::default();
    let mut dups = 0;
    let mut delivered = 0;
    for seed in 0..100 {
        let run = run_seed(gen_duplicate_notification_scenario(seed, &p)).unwrap();
        assert!(run.passed(), "seed {seed}\n{}", run.report);
        dups += wire_duplicates(&run.trace);
        for (key, n) in app_notification_counts(&run.trace) {
            assert_eq!(n, 1, "seed {seed}: {key:?} surfaced {n} times");
            delivered += 1;
        }
    }
    // The fault must actually have produced redeliveries.
    assert!(dups > 0);
    assert!(delivered > 100);
}

mod common;

use common::{contention_outcome, contention_scenario};
use coordsim::checker::check_trace;
use coordsim::sim::run_to_quiescence;
use coordsim::storage::records::table;
use coordsim::storage::KvStore;
use coordsim::sync::{lock_acquire, lock_release, Release};

#[test]
fn contended_writes_are_serialized() {
    let trace = run_to_quiescence(&contention_scenario(10, 100)).unwrap();
    let report = check_trace(&trace).unwrap();
    assert!(report.passed(), "{report}");
    let out = contention_outcome(&trace);
    assert_eq!(out.successes + out.failures, 1000, "{out:?}");
    // Every successful write bumped the version exactly once.
    assert_eq!(out.final_version, out.successes, "{out:?}");
    assert_eq!(out.commits, out.successes, "{out:?}");
    assert_eq!(out.distinct_txids as u64, out.successes + 1);
}

#[test]
fn lock_table() {
    let mut kv = KvStore::with_tables(&table::ALL);
    assert!(lock_acquire(&mut kv, "/n", 5, 20).unwrap().acquired);
    assert!(!lock_acquire(&mut kv, "/n", 10, 20).unwrap().acquired);
    let late = lock_acquire(&mut kv, "/n", 30, 20).unwrap();
    assert!(late.acquired);
    // The displaced holder cannot release the new lock.
    assert_eq!(lock_release(&mut kv, "/n", 5).unwrap(), Release::Lost);
    assert_eq!(lock_release(&mut kv, "/n", 30).unwrap(), Release::Released);
}

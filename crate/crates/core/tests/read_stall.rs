mod common;

use common::{read_case, read_timing, ReadCase};
use coordsim::checker::check_trace;
use coordsim::sim::run_to_quiescence;

fn run(case: ReadCase) -> common::ReadTiming {
    let (cfg, s, seq) = read_case(case);
    let trace = run_to_quiescence(&cfg).unwrap();
    let report = check_trace(&trace).unwrap();
    assert!(report.passed(), "{report}");
    read_timing(&trace, s, seq).expect("probe read fetched and observed")
}

#[test]
fn read_older_than_mrd_is_delivered_at_once() {
    let t = run(ReadCase::BelowMrd);
    assert!(t.fetched_mtxid < t.mrd_at_fetch, "{t:?}");
    // A notification is still in flight when the read completes.
    assert!(t.first_notify_after_fetch.unwrap() > t.observe_time, "{t:?}");
    assert_eq!(t.observe_time, t.fetch_time);
}

#[test]
fn read_meeting_own_pending_watch_waits_for_the_notification() {
    let t = run(ReadCase::EpochIntersecting);
    assert!(t.fetched_mtxid > t.mrd_at_fetch, "{t:?}");
    assert!(t.own_notify_between, "{t:?}");
    assert!(t.observe_time > t.fetch_time);
    assert_eq!(Some(t.observe_time), t.first_notify_after_fetch);
}

#[test]
fn read_meeting_foreign_watch_is_delivered_at_once() {
    let t = run(ReadCase::EpochDisjoint);
    assert!(t.fetched_mtxid > t.mrd_at_fetch, "{t:?}");
    assert!(!t.own_notify_between);
    assert_eq!(t.observe_time, t.fetch_time);
    assert!(t.first_notify_after_fetch.unwrap() > t.observe_time, "{t:?}");
}

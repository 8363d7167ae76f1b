use serde_json::json;

use coordsim::checker::{check_trace, Report};
use coordsim::sim::{run_to_quiescence, ScenarioConfig, Trace, TraceEvent, TraceKind};

fn demo() -> Trace {
    let text = include_str!("../scenarios/demo.json");
    run_to_quiescence(&ScenarioConfig::from_json(text).unwrap()).unwrap()
}

fn find(t: &Trace, kind: TraceKind, session: u32, seq: u64) -> usize {
    t.events
        .iter()
        .position(|e| e.kind == kind && e.session == Some(session) && e.u64_field("seq") == Some(seq))
        .unwrap_or_else(|| panic!("no {kind:?} for {session}#{seq}"))
}

fn failing(r: &Report) -> Vec<&str> {
    r.results.iter().filter(|c| !c.passed()).map(|c| c.name).collect()
}

#[test]
fn demo_trace_passes_and_round_trips() {
    let t = demo();
    assert!(check_trace(&t).unwrap().passed());
    let back = Trace::from_jsonl(&t.to_jsonl()).unwrap();
    assert_eq!(back, t);
}

#[test]
fn success_without_commit_breaks_atomicity() {
    let mut t = demo();
    let i = find(&t, TraceKind::ClientResult, 1, 1);
    let e = &mut t.events[i];
    e.txid = Some(99);
    e.payload["outcome"]["txid"] = json!(99);
    let r = check_trace(&t).unwrap();
    assert!(failing(&r).contains(&"Z1 atomicity"), "{r}");
}

#[test]
fn tampered_final_state_breaks_atomicity() {
    let mut t = demo();
    let last = t.events.len() - 1;
    assert_eq!(t.events[last].kind, TraceKind::Snapshot);
    t.events[last].payload["system"]["/app"]["version"] = json!(7);
    let r = check_trace(&t).unwrap();
    assert_eq!(failing(&r), vec!["Z1 atomicity"], "{r}");
}

#[test]
fn reordered_results_break_linearized_writes() {
    let mut t = demo();
    let a = find(&t, TraceKind::ClientResult, 1, 1);
    let b = find(&t, TraceKind::ClientResult, 1, 2);
    t.events[a].payload["seq"] = json!(2);
    t.events[b].payload["seq"] = json!(1);
    let r = check_trace(&t).unwrap();
    assert!(failing(&r).contains(&"Z2 linearized-writes"), "{r}");
}

#[test]
fn stale_read_breaks_single_system_image() {
    let mut t = demo();
    // Session 1 wrote /app at txid 2, then lists it.
    let i = find(&t, TraceKind::ClientReadObserve, 1, 3);
    let e = &mut t.events[i];
    assert_eq!(e.path.as_deref(), Some("/app"));
    e.txid = Some(1);
    e.payload["outcome"] = json!({"status": "children", "children": [], "mtxid": 1});
    let r = check_trace(&t).unwrap();
    assert!(failing(&r).contains(&"Z3 single-system-image"), "{r}");
}

#[test]
fn repeated_notification_breaks_ordered_notifications() {
    let mut t = demo();
    let i = t.events.iter().position(|e| e.kind == TraceKind::NotifyReceived).unwrap();
    let dup: TraceEvent = t.events[i].clone();
    t.events.insert(i + 1, dup);
    let r = check_trace(&t).unwrap();
    assert_eq!(failing(&r), vec!["Z4 ordered-notifications"], "{r}");
}

#[test]
fn dropped_notification_breaks_ordered_notifications() {
    // Session 1 watches a lease whose owner gets evicted, and stays open.
    let text = include_str!("../scenarios/crash.json");
    let mut t = run_to_quiescence(&ScenarioConfig::from_json(text).unwrap()).unwrap();
    assert!(check_trace(&t).unwrap().passed());
    let before = t.events.len();
    t.events.retain(|e| !(e.kind == TraceKind::NotifyReceived && e.session == Some(1)));
    assert!(t.events.len() < before);
    let r = check_trace(&t).unwrap();
    assert!(failing(&r).contains(&"Z4 ordered-notifications"), "{r}");
}

#[test]
fn leftover_epoch_entry_breaks_balance() {
    let mut t = demo();
    let last = t.events.len() - 1;
    t.events[last].payload["epochs"]["home"] = json!([42]);
    let r = check_trace(&t).unwrap();
    assert_eq!(failing(&r), vec!["epoch-balance"], "{r}");
}

#[test]
fn malformed_trace_is_an_error() {
    let mut t = demo();
    let i = t.events.iter().position(|e| e.kind == TraceKind::Commit).unwrap();
    t.events[i].txid = None;
    assert!(check_trace(&t).is_err());
}

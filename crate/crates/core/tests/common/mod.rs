#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use coordsim::checker::history::{AppRef, History};
use coordsim::model::{SessionId, Txid};
use coordsim::sim::{FaultMode, FaultSpec, FunctionKind, OpKind, ScenarioConfig, Trace, TraceKind, WorkloadOp};

/// The three ways a read may meet a pending notification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadCase {
    /// Object older than the session's most recent data.
    BelowMrd,
    /// Object newer, written while the session's watch was in flight.
    EpochIntersecting,
    /// Object newer, but the in-flight watch belongs to another session.
    EpochDisjoint,
}

/// Session 1 changes /x while the watch function delivering the change is
/// held back by a crash and a long retry delay. Returns the scenario and
/// the (session, seq) of the probe read.
pub fn read_case(case: ReadCase) -> (ScenarioConfig, SessionId, u32) {
    let mut cfg = ScenarioConfig::new(3, &[(1, "home"), (2, "home"), (3, "home")]);
    cfg.retry_delay_ticks = 20;
    cfg.faults.push(FaultSpec::new(
        FunctionKind::Watch,
        "before-deliver",
        1,
        FaultMode::CrashBeforeStep,
    ));
    let watcher = if case == ReadCase::EpochDisjoint { 3 } else { 2 };
    cfg.workload = vec![
        WorkloadOp::new(1, OpKind::Create, "/x").data(b"a").at(0),
        WorkloadOp::new(2, OpKind::Create, "/y").data(b"y").at(0),
        WorkloadOp::new(2, OpKind::Create, "/z").at(0),
        WorkloadOp::new(watcher, OpKind::GetData, "/x").watch().at(30),
        WorkloadOp::new(1, OpKind::SetData, "/x").data(b"b").at(40),
    ];
    let (path, seq) = match case {
        ReadCase::BelowMrd => ("/y", 4),
        ReadCase::EpochIntersecting => ("/x", 4),
        ReadCase::EpochDisjoint => ("/x", 3),
    };
    cfg.workload.push(WorkloadOp::new(2, OpKind::GetData, path).at(55));
    (cfg, 2, seq)
}

#[derive(Debug, Clone, Copy)]
pub struct ReadTiming {
    pub fetch_time: u64,
    pub fetched_mtxid: Txid,
    pub observe_time: u64,
    /// Highest txid the session had seen when the fetch returned.
    pub mrd_at_fetch: Txid,
    /// Earliest notification delivered to any session after the fetch.
    pub first_notify_after_fetch: Option<u64>,
    /// Whether one of the reader's own notifications arrived between fetch
    /// and observation.
    pub own_notify_between: bool,
}

pub fn read_timing(trace: &Trace, session: SessionId, seq: u32) -> Option<ReadTiming> {
    let ev = &trace.events;
    let fetch = ev.iter().position(|e| {
        e.kind == TraceKind::StorageRead
            && e.session == Some(session)
            && e.str_field("op") == Some("obj_get")
            && e.u64_field("seq") == Some(seq as u64)
    })?;
    let observe = ev.iter().position(|e| {
        e.kind == TraceKind::ClientReadObserve && e.session == Some(session) && e.u64_field("seq") == Some(seq as u64)
    })?;
    let mrd_at_fetch = ev[..fetch]
        .iter()
        .filter(|e| {
            e.session == Some(session)
                && matches!(
                    e.kind,
                    TraceKind::ClientResult | TraceKind::ClientReadObserve | TraceKind::NotifyReceived
                )
        })
        .filter_map(|e| e.txid)
        .max()
        .unwrap_or(0);
    Some(ReadTiming {
        fetch_time: ev[fetch].time,
        fetched_mtxid: ev[fetch].txid.unwrap_or(0),
        observe_time: ev[observe].time,
        mrd_at_fetch,
        first_notify_after_fetch: ev[fetch..]
            .iter()
            .find(|e| e.kind == TraceKind::NotifyReceived)
            .map(|e| e.time),
        own_notify_between: ev[fetch..observe]
            .iter()
            .any(|e| e.kind == TraceKind::NotifyReceived && e.session == Some(session)),
    })
}

/// Ten sessions hammering one node with unconditional writes.
pub fn contention_scenario(sessions: SessionId, ops: u64) -> ScenarioConfig {
    let ids: Vec<(SessionId, &str)> = (1..=sessions).map(|s| (s, "home")).collect();
    let mut cfg = ScenarioConfig::new(11, &ids);
    cfg.jitter_ticks = 2;
    cfg.workload.push(WorkloadOp::new(1, OpKind::Create, "/counter").at(0));
    for i in 0..ops {
        for s in 1..=sessions {
            let v = (s as u64 * 1000 + i).to_be_bytes();
            cfg.workload.push(WorkloadOp::new(s, OpKind::SetData, "/counter").data(&v).at(5 + i));
        }
    }
    cfg
}

#[derive(Debug)]
pub struct ContentionOutcome {
    pub successes: u64,
    pub failures: u64,
    pub final_version: u64,
    pub commits: u64,
    pub distinct_txids: usize,
}

pub fn contention_outcome(trace: &Trace) -> ContentionOutcome {
    let h = History::from_trace(trace).expect("trace parses");
    let writes = h.results.iter().filter(|r| r.op == "set_data");
    let successes = writes.clone().filter(|r| r.outcome.is_success()).count() as u64;
    let failures = writes.count() as u64 - successes;
    let (_, st) = h.final_state.expect("snapshot");
    let txids: BTreeSet<Txid> = h.commits.iter().map(|c| c.txid).collect();
    ContentionOutcome {
        successes,
        failures,
        final_version: st.system.get("/counter").map(|n| n.version).unwrap_or(0),
        commits: h.commits.iter().filter(|c| c.nodes.iter().any(|n| n.commit.path == "/counter")).count() as u64 - 1,
        distinct_txids: txids.len(),
    }
}

/// Counts (watch, txid) pairs per session in the application stream; the
/// value is how often each pair surfaced.
pub fn app_notification_counts(trace: &Trace) -> BTreeMap<(SessionId, u64, Txid), usize> {
    let h = History::from_trace(trace).expect("trace parses");
    let mut out = BTreeMap::new();
    for s in h.sessions.iter().copied() {
        for (_, r) in h.app_stream(s) {
            if let AppRef::Notify(i) = r {
                let n = &h.notifies[i];
                *out.entry((s, n.watch, n.txid)).or_insert(0) += 1;
            }
        }
    }
    out
}

pub fn wire_duplicates(trace: &Trace) -> usize {
    trace
        .events
        .iter()
        .filter(|e| e.kind == TraceKind::NotifyWire && e.field("duplicate").and_then(|v| v.as_bool()) == Some(true))
        .count()
}

/// Oracle alphabet for the exhaustive space.
pub fn small_alphabet(s: SessionId) -> Vec<WorkloadOp> {
    vec![
        WorkloadOp::new(s, OpKind::Create, "/a").data(b"1"),
        WorkloadOp::new(s, OpKind::Create, "/a/b"),
        WorkloadOp::new(s, OpKind::SetData, "/a").data(b"2"),
        WorkloadOp::new(s, OpKind::Delete, "/a/b"),
        WorkloadOp::new(s, OpKind::Delete, "/a"),
        WorkloadOp::new(s, OpKind::GetData, "/a"),
    ]
}

/// Every program of length 0..=max_len over the alphabet, as op indices.
pub fn programs(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = vec![];
        for p in &frontier {
            for op in 0..alphabet {
                let mut q: Vec<usize> = p.clone();
                q.push(op);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Unordered triples of programs; sessions are interchangeable, so each
/// multiset is generated once.
pub fn program_triples(alphabet: usize, max_len: usize) -> Vec<[Vec<usize>; 3]> {
    let ps = programs(alphabet, max_len);
    let mut out = vec![];
    for i in 0..ps.len() {
        for j in i..ps.len() {
            for k in j..ps.len() {
                out.push([ps[i].clone(), ps[j].clone(), ps[k].clone()]);
            }
        }
    }
    out
}

/// All sessions submit their programs at tick 0; the seed drives jitter.
pub fn oracle_scenario(seed: u64, progs: &[Vec<usize>]) -> ScenarioConfig {
    let ids: Vec<(SessionId, &str)> = (1..=progs.len() as SessionId).map(|s| (s, "home")).collect();
    let mut cfg = ScenarioConfig::new(seed, &ids);
    cfg.jitter_ticks = seed % 3;
    for (i, p) in progs.iter().enumerate() {
        let s = i as SessionId + 1;
        let alpha = small_alphabet(s);
        for &op in p {
            cfg.workload.push(alpha[op].clone().at(0));
        }
    }
    cfg
}

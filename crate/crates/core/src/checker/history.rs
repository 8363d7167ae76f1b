//! Typed view of a trace: the events the checks care about, with their
//! positions in the trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::functions::{NodeUpdate, WatchRecord};
use crate::model::{NodeImage, Outcome, SessionId, Txid, WatchId};
use crate::sim::trace::{Trace, TraceEvent, TraceKind};

#[derive(Debug, Clone)]
pub struct CommitEv {
    pub idx: usize,
    pub txid: Txid,
    pub request: String,
    pub session: SessionId,
    pub nodes: Vec<NodeUpdate>,
}

#[derive(Debug, Clone)]
pub struct ResultEv {
    pub idx: usize,
    pub session: SessionId,
    pub seq: u32,
    pub op: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
pub struct ObserveEv {
    pub idx: usize,
    pub session: SessionId,
    pub seq: u32,
    pub path: String,
    pub mtxid: Txid,
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
pub struct NotifyEv {
    pub idx: usize,
    pub session: SessionId,
    pub watch: WatchId,
    pub txid: Txid,
}

#[derive(Debug, Clone)]
pub struct SubmitEv {
    pub idx: usize,
    pub session: SessionId,
    pub seq: u32,
    pub op: String,
}

#[derive(Debug, Clone)]
pub struct FetchEv {
    pub idx: usize,
    pub session: SessionId,
    pub seq: u32,
}

#[derive(Debug, Clone)]
pub struct PutEv {
    pub idx: usize,
    pub region: String,
    pub path: String,
    pub txid: Txid,
}

#[derive(Debug, Clone)]
pub struct FiredEv {
    pub idx: usize,
    pub txid: Txid,
    pub watches: Vec<WatchRecord>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FinalState {
    #[serde(default)]
    pub system: BTreeMap<String, NodeImage>,
    #[serde(default)]
    pub pending: BTreeMap<String, Vec<Txid>>,
    #[serde(default)]
    pub regions: BTreeMap<String, BTreeMap<String, NodeImage>>,
    #[serde(default)]
    pub epochs: BTreeMap<String, Vec<WatchId>>,
}

/// Application-visible event of one session, in release order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppRef {
    Result(usize),
    Observe(usize),
    Notify(usize),
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub sessions: BTreeSet<SessionId>,
    pub commits: Vec<CommitEv>,
    pub results: Vec<ResultEv>,
    pub observes: Vec<ObserveEv>,
    pub notifies: Vec<NotifyEv>,
    pub submits: Vec<SubmitEv>,
    pub fetches: Vec<FetchEv>,
    pub puts: Vec<PutEv>,
    pub fired: Vec<FiredEv>,
    pub disconnected: BTreeMap<SessionId, usize>,
    pub closed: BTreeMap<SessionId, usize>,
    pub final_state: Option<(usize, FinalState)>,
    pub len: usize,
}

fn bad(idx: usize, reason: impl Into<String>) -> Error {
    Error::Trace {
        line: idx + 1,
        reason: reason.into(),
    }
}

fn session(e: &TraceEvent, idx: usize) -> Result<SessionId> {
    e.session.ok_or_else(|| bad(idx, "missing session"))
}

fn outcome(e: &TraceEvent, idx: usize) -> Result<Outcome> {
    let v = e.field("outcome").cloned().ok_or_else(|| bad(idx, "missing outcome"))?;
    serde_json::from_value(v).map_err(|err| bad(idx, format!("outcome: {err}")))
}

fn seq(e: &TraceEvent, idx: usize) -> Result<u32> {
    e.u64_field("seq").map(|s| s as u32).ok_or_else(|| bad(idx, "missing seq"))
}

impl History {
    pub fn from_trace(trace: &Trace) -> Result<History> {
        let mut h = History {
            len: trace.events.len(),
            ..Default::default()
        };
        for (idx, e) in trace.events.iter().enumerate() {
            match e.kind {
                TraceKind::SessionOpen => {
                    h.sessions.insert(session(e, idx)?);
                }
                TraceKind::Commit => {
                    let nodes = e.field("nodes").cloned().ok_or_else(|| bad(idx, "commit without nodes"))?;
                    h.commits.push(CommitEv {
                        idx,
                        txid: e.txid.ok_or_else(|| bad(idx, "commit without txid"))?,
                        request: e.str_field("request").unwrap_or_default().to_string(),
                        session: session(e, idx)?,
                        nodes: serde_json::from_value(nodes).map_err(|err| bad(idx, format!("nodes: {err}")))?,
                    });
                }
                TraceKind::ClientResult => h.results.push(ResultEv {
                    idx,
                    session: session(e, idx)?,
                    seq: seq(e, idx)?,
                    op: e.str_field("op").unwrap_or_default().to_string(),
                    outcome: outcome(e, idx)?,
                }),
                TraceKind::ClientReadObserve => h.observes.push(ObserveEv {
                    idx,
                    session: session(e, idx)?,
                    seq: seq(e, idx)?,
                    path: e.path.clone().unwrap_or_default(),
                    mtxid: e.txid.unwrap_or(0),
                    outcome: outcome(e, idx)?,
                }),
                TraceKind::NotifyReceived => h.notifies.push(NotifyEv {
                    idx,
                    session: session(e, idx)?,
                    watch: e.u64_field("watch").ok_or_else(|| bad(idx, "missing watch"))?,
                    txid: e.txid.ok_or_else(|| bad(idx, "missing txid"))?,
                }),
                TraceKind::ClientSubmit => {
                    let s = session(e, idx)?;
                    let op = e.str_field("op").unwrap_or_default().to_string();
                    if op == "disconnect" {
                        h.disconnected.entry(s).or_insert(idx);
                    } else {
                        h.submits.push(SubmitEv {
                            idx,
                            session: s,
                            seq: seq(e, idx)?,
                            op,
                        });
                    }
                }
                TraceKind::StorageRead if e.str_field("op") == Some("obj_get") => {
                    h.fetches.push(FetchEv {
                        idx,
                        session: session(e, idx)?,
                        seq: seq(e, idx)?,
                    })
                }
                TraceKind::StorageWrite if e.str_field("op") == Some("obj_put") => h.puts.push(PutEv {
                    idx,
                    region: e.str_field("region").unwrap_or_default().to_string(),
                    path: e.path.clone().unwrap_or_default(),
                    txid: e.txid.ok_or_else(|| bad(idx, "obj_put without txid"))?,
                }),
                TraceKind::WatchFired => {
                    let w = e.field("watches").cloned().unwrap_or_default();
                    h.fired.push(FiredEv {
                        idx,
                        txid: e.txid.ok_or_else(|| bad(idx, "watch-fired without txid"))?,
                        watches: serde_json::from_value(w).map_err(|err| bad(idx, format!("watches: {err}")))?,
                    });
                }
                TraceKind::SessionClose => {
                    h.closed.entry(session(e, idx)?).or_insert(idx);
                }
                TraceKind::Snapshot => {
                    let st: FinalState = serde_json::from_value(e.payload.clone())
                        .map_err(|err| bad(idx, format!("snapshot: {err}")))?;
                    h.final_state = Some((idx, st));
                }
                _ => {}
            }
        }
        Ok(h)
    }

    /// Per-session application stream in trace order.
    pub fn app_stream(&self, s: SessionId) -> Vec<(usize, AppRef)> {
        let mut out: Vec<(usize, AppRef)> = vec![];
        out.extend(
            self.results
                .iter()
                .enumerate()
                .filter(|(_, r)| r.session == s)
                .map(|(i, r)| (r.idx, AppRef::Result(i))),
        );
        out.extend(
            self.observes
                .iter()
                .enumerate()
                .filter(|(_, r)| r.session == s)
                .map(|(i, r)| (r.idx, AppRef::Observe(i))),
        );
        out.extend(
            self.notifies
                .iter()
                .enumerate()
                .filter(|(_, r)| r.session == s)
                .map(|(i, r)| (r.idx, AppRef::Notify(i))),
        );
        out.sort_by_key(|(idx, _)| *idx);
        out
    }

    /// Txid an application event exposes, if any.
    pub fn app_txid(&self, r: AppRef) -> Option<Txid> {
        match r {
            AppRef::Result(i) => self.results[i].outcome.success_txid(),
            AppRef::Observe(i) => Some(self.observes[i].mtxid),
            AppRef::Notify(i) => Some(self.notifies[i].txid),
        }
    }
}

//! Client session library: request pipelining rules, FIFO result delivery,
//! MRD tracking, epoch-based holds and duplicate-notification skipping.
//!
//! The session is a pure state machine. The simulator feeds it wire
//! messages and carries out the [`Effect`]s it returns.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::functions::{WriteOp, WriteRequest};
use crate::model::{Outcome, RequestId, SessionId, Txid, WatchEvent, WatchId};
use crate::sim::scenario::OpKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub watch_id: WatchId,
    pub path: String,
    pub event: WatchEvent,
    pub txid: Txid,
    /// Watch ids in flight in the region when the update was applied,
    /// excluding the ones this update fired.
    pub snapshot: Vec<WatchId>,
    /// Every watch id the update fired.
    pub fired: Vec<WatchId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOp {
    Write(WriteOp),
    Read { op: OpKind, path: String, watch: bool },
}

impl ClientOp {
    pub fn name(&self) -> &'static str {
        match self {
            ClientOp::Write(w) => w.name(),
            ClientOp::Read { op, .. } => op.as_str(),
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            ClientOp::Write(w) => w.path(),
            ClientOp::Read { path, .. } => Some(path),
        }
    }
}

/// A finished fetch, as seen by the session before ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadView {
    pub outcome: Outcome,
    /// Modification txid of the object read, 0 if there was none.
    pub mtxid: Txid,
    pub snapshot: Vec<WatchId>,
}

/// Event handed to the application, in delivery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppEvent {
    Result {
        seq: u32,
        op: &'static str,
        path: Option<String>,
        outcome: Outcome,
        /// Released by the stall timeout rather than the ordering rules.
        forced: bool,
    },
    Observe {
        seq: u32,
        op: &'static str,
        path: String,
        mtxid: Txid,
        outcome: Outcome,
    },
    Notification {
        notification: Notification,
        forced: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// Enqueue on the session's writer queue.
    Send(WriteRequest),
    /// Start a read in the home region.
    StartRead { seq: u32, op: OpKind, path: String, watch: bool },
    Release(AppEvent),
    /// Ask to be woken at `at` to re-evaluate held items.
    Wake { at: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientStatus {
    Active,
    Closed,
    Disconnected,
}

#[derive(Debug, Clone)]
struct Done {
    outcome: Outcome,
    /// Txid the result exposes: the object's mtxid for reads, the commit
    /// txid for successful writes.
    txid: Option<Txid>,
    snapshot: Vec<WatchId>,
    read: bool,
}

#[derive(Debug, Clone)]
struct Pending {
    seq: u32,
    op: ClientOp,
    issued: bool,
    done: Option<Done>,
    held_since: Option<u64>,
}

#[derive(Debug, Clone)]
struct Buffered {
    n: Notification,
    held_since: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: SessionId,
    pub region: String,
    mrd: Txid,
    mrd_history: Vec<Txid>,
    next_seq: u32,
    pending: VecDeque<Pending>,
    log: BTreeSet<(WatchId, Txid)>,
    /// Registered watches whose notification has not been released.
    registered: BTreeSet<WatchId>,
    buffered: BTreeMap<(Txid, WatchId), Buffered>,
    status: ClientStatus,
    stall_timeout: u64,
}

impl Session {
    pub fn new(id: SessionId, region: &str, stall_timeout: u64) -> Self {
        Session {
            id,
            region: region.to_string(),
            mrd: 0,
            mrd_history: vec![0],
            next_seq: 1,
            pending: VecDeque::new(),
            log: BTreeSet::new(),
            registered: BTreeSet::new(),
            buffered: BTreeMap::new(),
            status: ClientStatus::Active,
            stall_timeout,
        }
    }

    pub fn mrd(&self) -> Txid {
        self.mrd
    }

    /// Every value mrd has taken, in order.
    pub fn mrd_history(&self) -> &[Txid] {
        &self.mrd_history
    }

    pub fn status(&self) -> ClientStatus {
        self.status
    }

    pub fn responsive(&self) -> bool {
        self.status != ClientStatus::Disconnected
    }

    pub fn registered_watches(&self) -> &BTreeSet<WatchId> {
        &self.registered
    }

    pub fn idle(&self) -> bool {
        self.pending.is_empty() && self.buffered.is_empty()
    }

    /// Next sequence number [`submit`](Self::submit) will assign.
    pub fn next_seq(&self) -> u32 {
        self.next_seq
    }

    pub fn submit(&mut self, op: ClientOp, now: u64) -> Vec<Effect> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let local = match self.status {
            ClientStatus::Active => None,
            ClientStatus::Closed => Some(Outcome::failure("session-closed")),
            ClientStatus::Disconnected => Some(Outcome::Indeterminate {
                reason: "connection-loss".into(),
            }),
        };
        let read = matches!(op, ClientOp::Read { .. });
        self.pending.push_back(Pending {
            seq,
            op,
            issued: local.is_some(),
            done: local.map(|outcome| Done {
                outcome,
                txid: None,
                snapshot: vec![],
                read,
            }),
            held_since: None,
        });
        self.pump(now)
    }

    /// Result message for a write.
    pub fn on_result(&mut self, request: &RequestId, outcome: Outcome, snapshot: Vec<WatchId>, now: u64) -> Vec<Effect> {
        if !self.responsive() || request.is_internal() || request.session != self.id {
            return vec![];
        }
        let Some(p) = self.pending.iter_mut().find(|p| p.seq == request.seq) else {
            return vec![];
        };
        if p.done.is_some() || !p.issued {
            return vec![];
        }
        p.done = Some(Done {
            txid: outcome.success_txid(),
            outcome,
            snapshot,
            read: false,
        });
        self.pump(now)
    }

    pub fn on_registered(&mut self, watch_id: WatchId) {
        if self.responsive() {
            self.registered.insert(watch_id);
        }
    }

    pub fn on_read(&mut self, seq: u32, view: ReadView, now: u64) -> Vec<Effect> {
        if !self.responsive() {
            return vec![];
        }
        let Some(p) = self.pending.iter_mut().find(|p| p.seq == seq) else {
            return vec![];
        };
        if p.done.is_some() {
            return vec![];
        }
        p.done = Some(Done {
            outcome: view.outcome,
            txid: Some(view.mtxid),
            snapshot: view.snapshot,
            read: true,
        });
        self.pump(now)
    }

    /// Wire receipt of a notification. Returns whether it was a duplicate.
    pub fn on_notification(&mut self, n: Notification, now: u64) -> (bool, Vec<Effect>) {
        if !self.responsive() {
            return (false, vec![]);
        }
        if !self.log.insert((n.watch_id, n.txid)) {
            return (true, vec![]);
        }
        self.buffered.insert(
            (n.txid, n.watch_id),
            Buffered {
                n,
                held_since: None,
            },
        );
        (false, self.pump(now))
    }

    pub fn on_close_confirmed(&mut self) {
        if self.status == ClientStatus::Active {
            self.status = ClientStatus::Closed;
        }
    }

    /// The client stops responding; everything outstanding becomes
    /// indeterminate.
    pub fn disconnect(&mut self) -> Vec<Effect> {
        if self.status == ClientStatus::Disconnected {
            return vec![];
        }
        self.status = ClientStatus::Disconnected;
        self.buffered.clear();
        self.pending
            .drain(..)
            .map(|p| {
                let outcome = match p.done {
                    Some(d) if d.outcome.is_failure() => d.outcome,
                    _ => Outcome::Indeterminate {
                        reason: "connection-loss".into(),
                    },
                };
                Effect::Release(AppEvent::Result {
                    seq: p.seq,
                    op: p.op.name(),
                    path: p.op.path().map(str::to_string),
                    outcome,
                    forced: false,
                })
            })
            .collect()
    }

    pub fn wake(&mut self, now: u64) -> Vec<Effect> {
        if !self.responsive() {
            return vec![];
        }
        self.pump(now)
    }

    /// Watches whose notification is still expected: registered, not yet
    /// buffered.
    fn outstanding(&self, exclude: &[WatchId]) -> BTreeSet<WatchId> {
        let buffered: BTreeSet<WatchId> = self.buffered.keys().map(|(_, w)| *w).collect();
        self.registered
            .iter()
            .copied()
            .filter(|w| !buffered.contains(w) && !exclude.contains(w))
            .collect()
    }

    fn notification_held(&self, n: &Notification) -> bool {
        let out = self.outstanding(&n.fired);
        n.snapshot.iter().any(|w| out.contains(w))
    }

    fn result_held(&self, d: &Done) -> bool {
        let Some(v) = d.txid else { return false };
        if !d.read && !d.outcome.is_success() {
            return false;
        }
        if v < self.mrd {
            return false;
        }
        let out = self.outstanding(&[]);
        d.snapshot.iter().any(|w| out.contains(w)) || self.buffered.keys().any(|(t, _)| *t < v)
    }

    fn raise_mrd(&mut self, t: Txid) {
        if t > self.mrd {
            self.mrd = t;
            self.mrd_history.push(t);
        }
    }

    fn pump(&mut self, now: u64) -> Vec<Effect> {
        let mut fx = vec![];
        loop {
            let mut progressed = false;
            if let Some((&key, b)) = self.buffered.first_key_value() {
                let held = self.notification_held(&b.n);
                let expired = b.held_since.is_some_and(|h| now >= h + self.stall_timeout);
                if !held || expired {
                    let b = self.buffered.remove(&key).expect("present");
                    self.registered.remove(&b.n.watch_id);
                    self.raise_mrd(b.n.txid);
                    fx.push(Effect::Release(AppEvent::Notification {
                        notification: b.n,
                        forced: held,
                    }));
                    progressed = true;
                } else if b.held_since.is_none() {
                    self.buffered.get_mut(&key).expect("present").held_since = Some(now);
                    fx.push(Effect::Wake {
                        at: now + self.stall_timeout,
                    });
                }
            }
            if !progressed {
                if let Some(head) = self.pending.front() {
                    if let Some(d) = &head.done {
                        let held = self.result_held(d);
                        let expired = head.held_since.is_some_and(|h| now >= h + self.stall_timeout);
                        if !held || expired {
                            let p = self.pending.pop_front().expect("present");
                            fx.push(self.release(p, held));
                            progressed = true;
                        } else if head.held_since.is_none() {
                            self.pending.front_mut().expect("present").held_since = Some(now);
                            fx.push(Effect::Wake {
                                at: now + self.stall_timeout,
                            });
                        }
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        fx.extend(self.issue());
        fx
    }

    fn release(&mut self, p: Pending, forced: bool) -> Effect {
        let d = p.done.expect("released items are done");
        // Reads refused locally never reached storage and observe nothing.
        if let (true, false, Some(v)) = (d.read, forced, d.txid) {
            self.raise_mrd(v);
            if let ClientOp::Read { op, path, .. } = &p.op {
                return Effect::Release(AppEvent::Observe {
                    seq: p.seq,
                    op: op.as_str(),
                    path: path.clone(),
                    mtxid: v,
                    outcome: d.outcome,
                });
            }
        }
        let outcome = if d.read && forced {
            Outcome::failure("stalled")
        } else if d.read {
            d.outcome
        } else {
            if let Some(t) = d.outcome.success_txid() {
                self.raise_mrd(t);
            }
            if d.outcome.is_success() && matches!(p.op, ClientOp::Write(WriteOp::Deregister)) {
                self.status = ClientStatus::Closed;
            }
            d.outcome
        };
        Effect::Release(AppEvent::Result {
            seq: p.seq,
            op: p.op.name(),
            path: p.op.path().map(str::to_string),
            outcome,
            forced,
        })
    }

    /// Writes go out unless an earlier read is unfinished; reads go out once
    /// everything before them has finished.
    fn issue(&mut self) -> Vec<Effect> {
        let mut fx = vec![];
        let mut all_done = true;
        for p in self.pending.iter_mut() {
            let finished = p.done.is_some();
            if !p.issued {
                match &p.op {
                    ClientOp::Write(op) => {
                        p.issued = true;
                        fx.push(Effect::Send(WriteRequest {
                            id: RequestId::new(self.id, p.seq),
                            op: op.clone(),
                        }));
                    }
                    ClientOp::Read { op, path, watch } => {
                        if !all_done {
                            break;
                        }
                        p.issued = true;
                        fx.push(Effect::StartRead {
                            seq: p.seq,
                            op: *op,
                            path: path.clone(),
                            watch: *watch,
                        });
                    }
                }
            }
            if !finished {
                if matches!(p.op, ClientOp::Read { .. }) {
                    break;
                }
                all_done = false;
            }
        }
        fx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn get(path: &str) -> ClientOp {
        ClientOp::Read {
            op: OpKind::GetData,
            path: path.into(),
            watch: false,
        }
    }

    fn set(path: &str) -> ClientOp {
        ClientOp::Write(WriteOp::SetData {
            path: path.into(),
            data: vec![],
            version: None,
        })
    }

    fn data(mtxid: Txid) -> Outcome {
        Outcome::Data {
            data: vec![],
            mtxid,
            version: 0,
        }
    }

    fn released(fx: &[Effect]) -> Vec<&AppEvent> {
        fx.iter()
            .filter_map(|e| match e {
                Effect::Release(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    fn notif(w: WatchId, t: Txid, snapshot: Vec<WatchId>) -> Notification {
        Notification {
            watch_id: w,
            path: "/x".into(),
            event: WatchEvent::DataChanged,
            txid: t,
            snapshot,
            fired: vec![w],
        }
    }

    /// Session with mrd raised to `mrd` by a successful write.
    fn session_at(mrd: Txid) -> Session {
        let mut s = Session::new(1, "r", 100);
        s.submit(set("/w"), 0);
        s.on_result(&RequestId::new(1, 1), Outcome::Success { txid: Some(mrd), path: None }, vec![], 0);
        assert_eq!(s.mrd(), mrd);
        s
    }

    #[test]
    fn read_older_than_mrd_is_immediate() {
        let mut s = session_at(7);
        s.on_registered(3);
        let fx = s.submit(get("/x"), 1);
        assert!(matches!(fx[0], Effect::StartRead { seq: 2, .. }));
        let fx = s.on_read(
            2,
            ReadView {
                outcome: data(5),
                mtxid: 5,
                snapshot: vec![3],
            },
            2,
        );
        assert!(matches!(released(&fx)[..], [AppEvent::Observe { mtxid: 5, .. }]));
        assert_eq!(s.mrd(), 7);
    }

    #[test]
    fn read_with_in_flight_watch_is_held_until_notification() {
        let mut s = session_at(7);
        s.on_registered(3);
        s.submit(get("/x"), 1);
        let fx = s.on_read(
            2,
            ReadView {
                outcome: data(9),
                mtxid: 9,
                snapshot: vec![3],
            },
            2,
        );
        assert!(released(&fx).is_empty());
        let (dup, fx) = s.on_notification(notif(3, 8, vec![]), 4);
        assert!(!dup);
        let ev = released(&fx);
        assert!(matches!(ev[0], AppEvent::Notification { notification, .. } if notification.txid == 8));
        assert!(matches!(ev[1], AppEvent::Observe { mtxid: 9, .. }));
        assert_eq!(s.mrd(), 9);
    }

    #[test]
    fn read_with_disjoint_epoch_is_immediate() {
        let mut s = session_at(7);
        s.on_registered(3);
        s.submit(get("/x"), 1);
        let fx = s.on_read(
            2,
            ReadView {
                outcome: data(9),
                mtxid: 9,
                snapshot: vec![4],
            },
            2,
        );
        assert!(matches!(released(&fx)[..], [AppEvent::Observe { mtxid: 9, .. }]));
    }

    #[test]
    fn stalled_read_times_out() {
        let mut s = session_at(7);
        s.on_registered(3);
        s.submit(get("/x"), 1);
        let fx = s.on_read(
            2,
            ReadView {
                outcome: data(9),
                mtxid: 9,
                snapshot: vec![3],
            },
            2,
        );
        assert!(fx.contains(&Effect::Wake { at: 102 }));
        assert!(released(&s.wake(50)).is_empty());
        let fx = s.wake(102);
        assert!(matches!(released(&fx)[..], [AppEvent::Result { outcome: Outcome::Failure { reason }, .. }] if reason == "stalled"));
        assert_eq!(s.mrd(), 7);
    }

    #[test]
    fn duplicate_notifications_are_skipped() {
        let mut s = Session::new(1, "r", 100);
        s.on_registered(3);
        let (_, fx) = s.on_notification(notif(3, 5, vec![]), 0);
        assert_eq!(released(&fx).len(), 1);
        let (dup, fx) = s.on_notification(notif(3, 5, vec![]), 1);
        assert!(dup);
        assert!(fx.is_empty());
    }

    #[test]
    fn results_released_in_submission_order() {
        let mut s = Session::new(1, "r", 100);
        let fx = s.submit(set("/a"), 0);
        assert!(matches!(fx[0], Effect::Send(_)));
        let fx = s.submit(set("/b"), 0);
        assert!(matches!(fx[0], Effect::Send(_)));
        let fx = s.on_result(&RequestId::new(1, 2), Outcome::failure("no-node"), vec![], 1);
        assert!(released(&fx).is_empty());
        let fx = s.on_result(&RequestId::new(1, 1), Outcome::Success { txid: Some(4), path: None }, vec![], 2);
        let ev = released(&fx);
        assert!(matches!(ev[0], AppEvent::Result { seq: 1, .. }));
        assert!(matches!(ev[1], AppEvent::Result { seq: 2, .. }));
        assert_eq!(s.mrd(), 4);
    }

    #[test]
    fn read_waits_for_preceding_write_and_write_waits_for_read() {
        let mut s = Session::new(1, "r", 100);
        s.submit(set("/a"), 0);
        assert!(s.submit(get("/a"), 0).is_empty());
        assert!(s.submit(set("/b"), 0).is_empty());
        let fx = s.on_result(&RequestId::new(1, 1), Outcome::Success { txid: Some(1), path: None }, vec![], 1);
        assert!(fx.iter().any(|e| matches!(e, Effect::StartRead { seq: 2, .. })));
        assert!(!fx.iter().any(|e| matches!(e, Effect::Send(_))));
        let fx = s.on_read(
            2,
            ReadView {
                outcome: data(1),
                mtxid: 1,
                snapshot: vec![],
            },
            2,
        );
        assert!(fx.iter().any(|e| matches!(e, Effect::Send(r) if r.id.seq == 3)));
    }

    #[test]
    fn failure_leaves_mrd_and_disconnect_is_indeterminate() {
        let mut s = session_at(4);
        s.submit(set("/a"), 0);
        s.on_result(&RequestId::new(1, 2), Outcome::failure("bad-version"), vec![], 1);
        assert_eq!(s.mrd(), 4);
        s.submit(set("/b"), 2);
        let fx = s.disconnect();
        assert!(matches!(released(&fx)[..], [AppEvent::Result { outcome: Outcome::Indeterminate { .. }, .. }]));
        assert!(!s.responsive());
    }

    #[test]
    fn notifications_released_in_txid_order() {
        let mut s = Session::new(1, "r", 100);
        s.on_registered(1);
        s.on_registered(2);
        // Update 6 was applied while watch 1 (fired by 5) was in flight.
        let (_, fx) = s.on_notification(notif(2, 6, vec![1]), 0);
        assert!(released(&fx).is_empty());
        let (_, fx) = s.on_notification(notif(1, 5, vec![]), 1);
        let txids: Vec<Txid> = released(&fx)
            .iter()
            .map(|e| match e {
                AppEvent::Notification { notification, .. } => notification.txid,
                _ => 0,
            })
            .collect();
        assert_eq!(txids, vec![5, 6]);
    }
}

//! Writer function: per-session ordering, locking, validation and hand-off
//! to the distributor.

use std::collections::{BTreeMap, VecDeque};

use serde_json::json;

use super::{is_valid, DistributorUpdate, FailReason, Plan, WriteOp, WriteRequest};
use crate::error::Result;
use crate::model::{parent_of, sequential_name, Outcome, RequestId, SessionId};
use crate::queue::{distributor_push, Batch, QueueMode};
use crate::sim::fault::{step, FunctionKind, PointAction};
use crate::sim::trace::TraceKind;
use crate::sim::world::{InvId, Invocation, QueueId, World};
use crate::storage::records::{field, session_key, table, DoneMarker, SessionStatus};
use crate::storage::{Condition, Mutation};
use crate::sync::{commit_unlock, lock_acquire, lock_release, Commit, Release};

/// Lock attempts per request before the invocation gives up.
const LOCK_ATTEMPTS: u32 = 3;
/// Wait before re-validating a request that failed against records whose
/// latest commits are still being distributed.
const SETTLE_TICKS: u64 = 2;
/// Waits allowed per request. Only orphaned pending transactions, which
/// are a protocol violation of their own, outlast this.
const SETTLE_WAITS: u32 = 64;

#[derive(Debug, Clone)]
enum Work {
    Request(WriteRequest),
    /// Final step of a deregistration, after its sub-deletes.
    Close(WriteRequest),
}

#[derive(Debug, Clone)]
enum Phase {
    Next,
    Lock { attempt: u32 },
    Validate,
    Push(Plan),
    Commit(DistributorUpdate),
    Finish { committed: bool },
    Deregister,
    Close,
}

#[derive(Debug)]
pub struct WriterInv {
    pub(crate) queue: SessionId,
    pub(crate) occurrence: u64,
    pub(crate) delivery_count: u32,
    work: VecDeque<Work>,
    current: Option<Work>,
    held: BTreeMap<String, u64>,
    phase: Phase,
    settle_waits: u32,
}

impl WriterInv {
    pub(crate) fn new(queue: SessionId, batch: &Batch<WriteRequest>) -> Self {
        WriterInv {
            queue,
            occurrence: 0,
            delivery_count: batch.delivery_count,
            work: batch.messages.iter().map(|m| Work::Request(m.payload.clone())).collect(),
            current: None,
            held: BTreeMap::new(),
            phase: Phase::Next,
            settle_waits: 0,
        }
    }

    fn request(&self) -> &WriteRequest {
        match self.current.as_ref().expect("current request") {
            Work::Request(r) | Work::Close(r) => r,
        }
    }
}

/// What a phase asks the event loop to do next.
enum Next {
    Step,
    After(u64),
    Crash(&'static str),
}

impl World {
    fn take_writer(&mut self, inv: InvId) -> Option<WriterInv> {
        match self.invocations.remove(&inv) {
            Some(Invocation::Writer(w)) => Some(w),
            Some(other) => {
                self.invocations.insert(inv, other);
                None
            }
            None => None,
        }
    }

    pub(crate) fn writer_step(&mut self, inv: InvId) -> Result<()> {
        let Some(mut w) = self.take_writer(inv) else {
            return Ok(());
        };
        // Phases without storage effects run inline.
        if matches!(w.phase, Phase::Next) {
            match w.work.pop_front() {
                None => {
                    self.invocations.insert(inv, Invocation::Writer(w));
                    self.complete(inv, json!({}));
                    return Ok(());
                }
                Some(work) => {
                    w.phase = match &work {
                        Work::Close(_) => Phase::Close,
                        Work::Request(r) if r.op == WriteOp::Deregister => Phase::Deregister,
                        Work::Request(_) => Phase::Lock { attempt: 1 },
                    };
                    w.current = Some(work);
                    w.settle_waits = 0;
                    w.held.clear();
                }
            }
        }
        let label = match w.phase {
            Phase::Lock { .. } => Some(step::BEFORE_LOCK),
            Phase::Validate => Some(step::AFTER_LOCK),
            Phase::Push(_) => Some(step::BEFORE_PUSH),
            Phase::Commit(_) => Some(step::BETWEEN_PUSH_AND_COMMIT),
            Phase::Finish { .. } => Some(step::AFTER_COMMIT_BEFORE_UNLOCK),
            _ => None,
        };
        let action = match label {
            Some(l) => self.point(FunctionKind::Writer, w.occurrence, l),
            None => PointAction::Continue,
        };
        if action == PointAction::CrashNow {
            self.invocations.insert(inv, Invocation::Writer(w));
            self.crash(inv, label.unwrap_or("writer"), "injected");
            return Ok(());
        }
        let next = self.writer_phase(&mut w)?;
        self.invocations.insert(inv, Invocation::Writer(w));
        if action == PointAction::CrashAfterStep {
            self.crash(inv, label.unwrap_or("writer"), "injected-after");
            return Ok(());
        }
        match next {
            Next::Step => self.step_later(inv),
            Next::After(d) => self.after(d, crate::sim::world::Action::Step(inv)),
            Next::Crash(reason) => self.crash(inv, "lock", reason),
        }
        Ok(())
    }

    fn writer_phase(&mut self, w: &mut WriterInv) -> Result<Next> {
        let now = self.now();
        let phase = std::mem::replace(&mut w.phase, Phase::Next);
        match phase {
            Phase::Next => Ok(Next::Step),
            Phase::Lock { attempt } => {
                let req = w.request().clone();
                let max_hold = self.cfg.lock_max_hold_ticks;
                let mut all = true;
                for p in req.op.lock_paths() {
                    if w.held.contains_key(&p) {
                        continue;
                    }
                    let got = lock_acquire(&mut self.kv, &p, now, max_hold)?;
                    self.emit(
                        self.ev(TraceKind::StorageWrite)
                            .session(req.id.session)
                            .path(p.clone())
                            .payload(json!({"op": "lock", "request": req.id.to_string(), "acquired": got.acquired, "ts": now})),
                    );
                    if got.acquired {
                        w.held.insert(p, now);
                    } else {
                        all = false;
                        break;
                    }
                }
                if all {
                    w.phase = Phase::Validate;
                    return Ok(Next::Step);
                }
                if attempt < LOCK_ATTEMPTS {
                    w.phase = Phase::Lock { attempt: attempt + 1 };
                    return Ok(Next::After(1));
                }
                self.release_held(w)?;
                // Retried from the same request when the batch comes back.
                w.work.push_front(w.current.take().expect("current"));
                Ok(Next::Crash("lock-contended"))
            }
            Phase::Validate => {
                let req = w.request().clone();
                let sess = self.session_record(req.id.session)?;
                let marker = sess.as_ref().and_then(|s| s.done.get(&req.id.marker()).cloned());
                match marker {
                    Some(DoneMarker::Committed(_)) => {
                        self.release_held(w)?;
                        return Ok(Next::Step);
                    }
                    Some(DoneMarker::Failed(r)) => {
                        self.release_held(w)?;
                        self.notify_client_failure(&req.id, &r);
                        return Ok(Next::Step);
                    }
                    None => {}
                }
                let active = sess.as_ref().is_some_and(|s| s.status == SessionStatus::Active);
                if !active && !req.id.is_internal() {
                    self.fail_request(w, &req.id, FailReason::SessionExpired)?;
                    return Ok(Next::Step);
                }
                let path = req.op.path().expect("write has a path").to_string();
                let parent = match parent_of(&path) {
                    Some(p) => self.node_record(p)?,
                    None => None,
                };
                let target = match &req.op {
                    WriteOp::Create { sequential: true, .. } => {
                        sequential_name(&path, parent.as_ref().map(|p| p.seq_counter).unwrap_or(0))
                    }
                    _ => path.clone(),
                };
                let node = self.node_record(&target)?;
                // A failure reports the state it was checked against, so that
                // state must already be visible to readers.
                let undistributed = [&node, &parent]
                    .into_iter()
                    .any(|r| r.as_ref().is_some_and(|r| !r.pending.is_empty()));
                self.emit(
                    self.ev(TraceKind::StorageRead)
                        .session(req.id.session)
                        .path(target.clone())
                        .payload(json!({"op": "validate", "request": req.id.to_string(), "undistributed": undistributed})),
                );
                let plan = is_valid(&req.op, node.as_ref(), parent.as_ref()).and_then(|_| {
                    Plan::build(&req, node.as_ref(), parent.as_ref(), &w.held).ok_or(FailReason::NoNode)
                });
                match plan {
                    Ok(plan) => {
                        w.phase = Phase::Push(plan);
                        Ok(Next::Step)
                    }
                    Err(_) if undistributed && w.settle_waits < SETTLE_WAITS => {
                        w.settle_waits += 1;
                        self.release_held(w)?;
                        w.phase = Phase::Lock { attempt: 1 };
                        Ok(Next::After(SETTLE_TICKS))
                    }
                    Err(r) => {
                        self.fail_request(w, &req.id, r)?;
                        Ok(Next::Step)
                    }
                }
            }
            Phase::Push(plan) => {
                let req = w.request().clone();
                let mode = self.cfg.queue_mode;
                let writer = w.queue;
                let mut pushed = None;
                let txid = distributor_push(&mut self.kv, &mut self.dist_queue, mode, now, |t| {
                    let u = DistributorUpdate {
                        request: req.id.clone(),
                        txid: t,
                        kind: plan.kind,
                        path: plan.path.clone(),
                        nodes: plan.materialize(t),
                        ephemeral: plan.ephemeral.clone(),
                        writer,
                    };
                    pushed = Some(u.clone());
                    u
                })?;
                let update = pushed.expect("push built the update");
                self.emit(
                    self.ev(TraceKind::DistributorPush)
                        .session(req.id.session)
                        .txid(txid)
                        .path(update.path.clone())
                        .payload(json!({"request": req.id.to_string(), "mode": mode.as_str()})),
                );
                self.emit(
                    self.ev(TraceKind::Enqueue)
                        .session(req.id.session)
                        .txid(txid)
                        .path(update.path.clone())
                        .payload(json!({"queue": "distributor", "update": update})),
                );
                let ql = self.cfg.latencies.queue;
                self.schedule_dispatch(QueueId::Distributor, ql);
                match mode {
                    QueueMode::AtomicPush => {
                        let committed = self.writer_commit(&update)?;
                        w.phase = Phase::Finish { committed };
                    }
                    QueueMode::SequenceNumber => w.phase = Phase::Commit(update),
                }
                Ok(Next::Step)
            }
            Phase::Commit(update) => {
                let committed = self.writer_commit(&update)?;
                w.phase = Phase::Finish { committed };
                Ok(Next::Step)
            }
            Phase::Finish { committed } => {
                if committed {
                    w.held.clear();
                } else {
                    self.release_held(w)?;
                }
                Ok(Next::Step)
            }
            Phase::Deregister => {
                let req = w.request().clone();
                let s = req.id.session;
                let sess = self.session_record(s)?;
                let marker = sess.as_ref().and_then(|r| r.done.get(&req.id.marker()).cloned());
                if let Some(m) = marker {
                    match m {
                        DoneMarker::Committed(_) => self.notify_client_success(&req.id),
                        DoneMarker::Failed(r) => self.notify_client_failure(&req.id, &r),
                    }
                    return Ok(Next::Step);
                }
                let Some(sess) = sess else {
                    return Ok(Next::Step);
                };
                if sess.status == SessionStatus::Closed {
                    self.fail_request(w, &req.id, FailReason::SessionExpired)?;
                    return Ok(Next::Step);
                }
                self.kv.conditional_update(
                    table::SESSIONS,
                    &session_key(s),
                    &Condition::absent(&req.id.marker()),
                    &[Mutation::set(field::STATUS, SessionStatus::Evicting.as_str())],
                )?;
                self.emit(
                    self.ev(TraceKind::StorageWrite)
                        .session(s)
                        .payload(json!({"op": "session-status", "status": "evicting", "request": req.id.to_string(), "ephemeral": sess.ephemeral})),
                );
                w.work.push_front(Work::Close(req.clone()));
                for p in sess.ephemeral.iter().rev() {
                    w.work.push_front(Work::Request(WriteRequest {
                        id: req.id.with_sub(p),
                        op: WriteOp::Delete {
                            path: p.clone(),
                            version: None,
                        },
                    }));
                }
                Ok(Next::Step)
            }
            Phase::Close => {
                let req = w.request().clone();
                let s = req.id.session;
                let out = self.kv.conditional_update(
                    table::SESSIONS,
                    &session_key(s),
                    &Condition::absent(&req.id.marker()),
                    &[
                        Mutation::set(field::STATUS, SessionStatus::Closed.as_str()),
                        Mutation::Set(req.id.marker(), DoneMarker::Committed(0).to_value()),
                    ],
                )?;
                if out.applied() {
                    self.emit(
                        self.ev(TraceKind::SessionClose)
                            .session(s)
                            .payload(json!({"request": req.id.to_string(), "evicted": req.id.seq == 0})),
                    );
                }
                self.notify_client_success(&req.id);
                Ok(Next::Step)
            }
        }
    }

    fn writer_commit(&mut self, update: &DistributorUpdate) -> Result<bool> {
        let legs = update.extra_legs(self.cfg.queue_mode);
        let out = commit_unlock(&mut self.kv, &update.commits(), update.txid, legs)?;
        let committed = out == Commit::Committed;
        if committed {
            self.trace_commit(update, "writer");
        } else {
            self.emit(
                self.ev(TraceKind::StorageWrite)
                    .session(update.request.session)
                    .txid(update.txid)
                    .path(update.path.clone())
                    .payload(json!({"op": "commit", "request": update.request.to_string(), "applied": false})),
            );
        }
        Ok(committed)
    }

    pub(crate) fn trace_commit(&mut self, update: &DistributorUpdate, by: &str) {
        self.emit(
            self.ev(TraceKind::Commit)
                .session(update.request.session)
                .txid(update.txid)
                .path(update.path.clone())
                .payload(json!({
                    "request": update.request.to_string(),
                    "kind": update.kind,
                    "nodes": update.nodes,
                    "by": by,
                })),
        );
    }

    fn release_held(&mut self, w: &mut WriterInv) -> Result<()> {
        let session = w.queue;
        for (p, ts) in std::mem::take(&mut w.held).into_iter().rev() {
            let r = lock_release(&mut self.kv, &p, ts)?;
            self.emit(
                self.ev(TraceKind::StorageWrite)
                    .session(session)
                    .path(p)
                    .payload(json!({"op": "unlock", "ts": ts, "released": r == Release::Released})),
            );
        }
        Ok(())
    }

    /// Records the failure marker, releases the locks and tells the client.
    fn fail_request(&mut self, w: &mut WriterInv, id: &RequestId, reason: FailReason) -> Result<()> {
        let marker = id.marker();
        let out = self.kv.conditional_update(
            table::SESSIONS,
            &session_key(id.session),
            &Condition::absent(&marker),
            &[Mutation::Set(marker, DoneMarker::Failed(reason.as_str().into()).to_value())],
        )?;
        self.emit(
            self.ev(TraceKind::StorageWrite)
                .session(id.session)
                .payload(json!({"op": "fail-marker", "request": id.to_string(), "reason": reason.as_str(), "applied": out.applied()})),
        );
        self.release_held(w)?;
        self.notify_client_failure(id, reason.as_str());
        Ok(())
    }

    pub(crate) fn notify_client_failure(&mut self, id: &RequestId, reason: &str) {
        if !id.is_silent() {
            self.notify_result(id, Outcome::failure(reason), vec![]);
        }
    }

    fn notify_client_success(&mut self, id: &RequestId) {
        if !id.is_silent() {
            self.notify_result(id, Outcome::Success { txid: None, path: None }, vec![]);
        }
    }
}

//! The simulated deployment: stores, queues, function invocations and
//! client sessions, driven by one event loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use super::fault::{FaultPlan, FunctionKind, PointAction};
use super::scenario::{OpKind, ScenarioConfig, WorkloadOp};
use super::scheduler::{Scheduler, SimTime};
use super::trace::{Trace, TraceEvent, TraceKind};
use crate::client::{AppEvent, ClientOp, Effect, Notification, ReadView, Session};
use crate::error::{Error, Result};
use crate::functions::distributor::DistributorInv;
use crate::functions::heartbeat::HeartbeatInv;
use crate::functions::watch::{WatchInput, WatchInv};
use crate::functions::writer::WriterInv;
use crate::functions::{DistributorUpdate, WriteOp, WriteRequest};
use crate::model::{Outcome, RequestId, SessionId, WatchId, WatchKind, ROOT};
use crate::queue::{Batch, FailOutcome, FifoQueue};
use crate::storage::records::{field, session_key, table, watch_key, SessionStatus, SystemNodeRecord, WATCH_ID_COUNTER};
use crate::storage::{Condition, KvStore, Mutation, UserStore, Value};
use crate::sync::{counter_add, list_read};

pub type InvId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum QueueId {
    Writer(SessionId),
    Distributor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ReadStage {
    Register,
    /// Fetch until the object reaches the system state seen at
    /// registration.
    Fetch { catch_up: u64 },
}

#[derive(Debug, Clone)]
pub(crate) enum Msg {
    Result {
        request: RequestId,
        outcome: Outcome,
        snapshot: Vec<WatchId>,
    },
    Notify {
        inv: InvId,
        notification: Notification,
    },
    Ping {
        inv: InvId,
    },
}

#[derive(Debug, Clone)]
pub(crate) enum Action {
    Submit(usize),
    Dispatch(QueueId),
    Step(InvId),
    StartWatch { input: WatchInput, attempt: u32 },
    HeartbeatTick,
    Deliver { session: SessionId, msg: Msg },
    Ack { inv: InvId, session: SessionId, watch: WatchId },
    Pong { inv: InvId, session: SessionId },
    Read { session: SessionId, seq: u32, op: OpKind, path: String, watch: bool, stage: ReadStage },
    Wake(SessionId),
}

#[derive(Debug)]
pub(crate) enum Invocation {
    Writer(WriterInv),
    Distributor(DistributorInv),
    Watch(WatchInv),
    Heartbeat(HeartbeatInv),
}

impl Invocation {
    fn kind(&self) -> FunctionKind {
        match self {
            Invocation::Writer(_) => FunctionKind::Writer,
            Invocation::Distributor(_) => FunctionKind::Distributor,
            Invocation::Watch(_) => FunctionKind::Watch,
            Invocation::Heartbeat(_) => FunctionKind::Heartbeat,
        }
    }
}

pub struct World {
    pub(crate) cfg: ScenarioConfig,
    pub(crate) sched: Scheduler<Action>,
    pub(crate) kv: KvStore,
    pub(crate) user: UserStore,
    pub(crate) trace: Trace,
    rng: ChaCha8Rng,
    faults: FaultPlan,
    pub(crate) clients: BTreeMap<SessionId, Session>,
    pub(crate) writer_queues: BTreeMap<SessionId, FifoQueue<WriteRequest>>,
    pub(crate) dist_queue: FifoQueue<DistributorUpdate>,
    pub(crate) invocations: BTreeMap<InvId, Invocation>,
    occurrences: BTreeMap<FunctionKind, u64>,
    next_inv: InvId,
    events: u64,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut kv = KvStore::with_tables(&table::ALL);
        let mut user = UserStore::new(&cfg.regions);
        let root = crate::model::NodeImage::default();
        kv.conditional_update(
            table::NODES,
            ROOT,
            &Condition::Always,
            &crate::storage::records::image_mutations(&root),
        )?;
        for r in &cfg.regions {
            user.put(
                r,
                crate::storage::DataNodeObject {
                    path: ROOT.into(),
                    image: root.clone(),
                    epoch_snapshot: vec![],
                    deleted: false,
                },
            )?;
        }
        let stall = cfg.stall_timeout();
        let mut w = World {
            sched: Scheduler::new(),
            kv,
            user,
            trace: Trace::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            faults: FaultPlan::new(&cfg.faults),
            clients: BTreeMap::new(),
            writer_queues: BTreeMap::new(),
            dist_queue: FifoQueue::new(cfg.batch_max, cfg.retry_cap),
            invocations: BTreeMap::new(),
            occurrences: BTreeMap::new(),
            next_inv: 1,
            events: 0,
            cfg,
        };
        for s in w.cfg.sessions.clone() {
            w.kv.conditional_update(
                table::SESSIONS,
                &session_key(s.id),
                &Condition::ItemAbsent,
                &[
                    Mutation::set(field::STATUS, SessionStatus::Active.as_str()),
                    Mutation::set(field::REGION, s.region.as_str()),
                    Mutation::set(field::LAST_HB, 0),
                ],
            )?;
            w.clients.insert(s.id, Session::new(s.id, &s.region, stall));
            w.writer_queues
                .insert(s.id, FifoQueue::new(w.cfg.batch_max, w.cfg.retry_cap));
            w.emit(TraceEvent::new(0, TraceKind::SessionOpen).session(s.id).payload(json!({"region": s.region})));
        }
        for i in 0..w.cfg.workload.len() {
            let at = w.cfg.workload[i].at;
            w.sched.schedule(Action::Submit(i), at);
        }
        if !w.cfg.sessions.is_empty() {
            let p = w.cfg.heartbeat_period_ticks;
            w.sched.schedule(Action::HeartbeatTick, p);
        }
        Ok(w)
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    /// Runs until no events remain and returns the trace, ending with a
    /// snapshot of every store.
    pub fn run(mut self) -> Result<Trace> {
        while let Some((_, action)) = self.sched.pop() {
            self.events += 1;
            if self.events > self.cfg.max_events {
                return Err(Error::NonTermination(self.cfg.max_events));
            }
            self.handle(action)?;
        }
        self.sched.finalize();
        let snap = self.snapshot()?;
        let now = self.now();
        self.emit(TraceEvent::new(now, TraceKind::Snapshot).payload(snap));
        Ok(self.trace)
    }

    fn handle(&mut self, action: Action) -> Result<()> {
        match action {
            Action::Submit(i) => self.submit(i),
            Action::Dispatch(q) => self.dispatch(q),
            Action::Step(inv) => self.step(inv),
            Action::StartWatch { input, attempt } => {
                self.start_watch(input, attempt);
                Ok(())
            }
            Action::HeartbeatTick => self.heartbeat_tick(),
            Action::Deliver { session, msg } => self.deliver(session, msg),
            Action::Ack { inv, session, watch } => {
                self.watch_ack(inv, session, watch);
                Ok(())
            }
            Action::Pong { inv, session } => {
                self.heartbeat_pong(inv, session);
                Ok(())
            }
            Action::Read {
                session,
                seq,
                op,
                path,
                watch,
                stage,
            } => self.read_step(session, seq, op, path, watch, stage),
            Action::Wake(s) => {
                let now = self.now();
                let fx = match self.clients.get_mut(&s) {
                    Some(c) => c.wake(now),
                    None => vec![],
                };
                self.client_effects(s, fx)
            }
        }
    }

    // ---- plumbing ----

    pub(crate) fn emit(&mut self, e: TraceEvent) {
        self.trace.push(e);
    }

    pub(crate) fn ev(&self, kind: TraceKind) -> TraceEvent {
        TraceEvent::new(self.now(), kind)
    }

    pub(crate) fn after(&mut self, delay: SimTime, a: Action) {
        self.sched.schedule(a, delay);
    }

    pub(crate) fn step_later(&mut self, inv: InvId) {
        let d = self.cfg.latencies.step;
        self.after(d, Action::Step(inv));
    }

    fn jitter(&mut self) -> SimTime {
        if self.cfg.jitter_ticks == 0 {
            0
        } else {
            self.rng.gen_range(0..=self.cfg.jitter_ticks)
        }
    }

    pub(crate) fn schedule_dispatch(&mut self, q: QueueId, base: SimTime) {
        let extra = match q {
            QueueId::Distributor => self.cfg.latencies.distributor,
            QueueId::Writer(_) => 0,
        };
        let d = base + extra + self.jitter();
        self.after(d, Action::Dispatch(q));
    }

    pub(crate) fn send(&mut self, session: SessionId, msg: Msg) {
        let d = self.cfg.latencies.wire;
        self.after(d, Action::Deliver { session, msg });
    }

    pub(crate) fn notify_result(&mut self, request: &RequestId, outcome: Outcome, snapshot: Vec<WatchId>) {
        let e = self
            .ev(TraceKind::NotifySent)
            .session(request.session)
            .payload(json!({"request": request.to_string(), "outcome": outcome}));
        let e = match outcome.success_txid() {
            Some(t) => e.txid(t),
            None => e,
        };
        self.emit(e);
        self.send(
            request.session,
            Msg::Result {
                request: request.clone(),
                outcome,
                snapshot,
            },
        );
    }

    /// Fault check at a labeled point of invocation `inv`.
    pub(crate) fn point(&mut self, kind: FunctionKind, occurrence: u64, label: &str) -> PointAction {
        self.faults.check(kind, label, occurrence)
    }

    fn new_invocation(&mut self, inv: Invocation, payload: Json) -> InvId {
        let id = self.next_inv;
        self.next_inv += 1;
        let kind = inv.kind();
        let occ = self.occurrences.entry(kind).or_insert(0);
        *occ += 1;
        let occurrence = *occ;
        let mut inv = inv;
        match &mut inv {
            Invocation::Writer(w) => w.occurrence = occurrence,
            Invocation::Distributor(d) => d.occurrence = occurrence,
            Invocation::Watch(w) => w.occurrence = occurrence,
            Invocation::Heartbeat(h) => h.occurrence = occurrence,
        }
        let mut p = payload;
        p["function"] = json!(kind.as_str());
        p["inv"] = json!(id);
        p["occurrence"] = json!(occurrence);
        self.emit(self.ev(TraceKind::InvokeStart).payload(p));
        self.invocations.insert(id, inv);
        id
    }

    pub(crate) fn crash(&mut self, inv: InvId, point: &str, reason: &str) {
        let Some(i) = self.invocations.remove(&inv) else {
            return;
        };
        let kind = i.kind();
        self.emit(
            self.ev(TraceKind::InvokeCrash)
                .payload(json!({"function": kind.as_str(), "inv": inv, "point": point, "reason": reason})),
        );
        let delay = self.cfg.retry_delay_ticks;
        match i {
            Invocation::Writer(w) => {
                let q = self.writer_queues.get_mut(&w.queue).expect("writer queue");
                if let FailOutcome::DeadLetter(msgs) = q.fail() {
                    let ids: Vec<String> = msgs.iter().map(|m| m.payload.id.to_string()).collect();
                    self.emit(
                        self.ev(TraceKind::DeadLetter)
                            .session(w.queue)
                            .payload(json!({"queue": format!("writer:{}", w.queue), "requests": ids})),
                    );
                }
                self.schedule_dispatch(QueueId::Writer(w.queue), delay);
            }
            Invocation::Distributor(_) => {
                if let FailOutcome::DeadLetter(msgs) = self.dist_queue.fail() {
                    let ids: Vec<u64> = msgs.iter().map(|m| m.payload.txid).collect();
                    self.emit(
                        self.ev(TraceKind::DeadLetter)
                            .payload(json!({"queue": "distributor", "txids": ids})),
                    );
                }
                self.schedule_dispatch(QueueId::Distributor, delay);
            }
            Invocation::Watch(w) => {
                let attempt = w.attempt + 1;
                if self.cfg.retry_cap.is_some_and(|cap| attempt > cap) {
                    self.emit(
                        self.ev(TraceKind::DeadLetter)
                            .txid(w.input.txid)
                            .payload(json!({"queue": "watch", "region": w.input.region})),
                    );
                } else {
                    self.after(
                        delay,
                        Action::StartWatch {
                            input: w.input,
                            attempt,
                        },
                    );
                }
            }
            Invocation::Heartbeat(_) => {}
        }
    }

    pub(crate) fn complete(&mut self, inv: InvId, payload: Json) {
        let Some(i) = self.invocations.remove(&inv) else {
            return;
        };
        let kind = i.kind();
        let mut p = payload;
        if p.is_null() {
            p = json!({});
        }
        p["function"] = json!(kind.as_str());
        p["inv"] = json!(inv);
        self.emit(self.ev(TraceKind::InvokeComplete).payload(p));
        let dup = self.cfg.duplicate_delivery && self.rng.gen_bool(0.3);
        let ql = self.cfg.latencies.queue;
        match i {
            Invocation::Writer(w) => {
                let q = self.writer_queues.get_mut(&w.queue).expect("writer queue");
                if dup && w.delivery_count == 1 {
                    q.complete_with_duplicate();
                } else {
                    q.complete();
                }
                if q.has_work() {
                    self.schedule_dispatch(QueueId::Writer(w.queue), ql);
                }
            }
            Invocation::Distributor(d) => {
                if dup && d.delivery_count == 1 {
                    self.dist_queue.complete_with_duplicate();
                } else {
                    self.dist_queue.complete();
                }
                if self.dist_queue.has_work() {
                    self.schedule_dispatch(QueueId::Distributor, ql);
                }
            }
            Invocation::Watch(_) | Invocation::Heartbeat(_) => {}
        }
    }

    pub(crate) fn enqueue_write(&mut self, req: WriteRequest) {
        let now = self.now();
        let s = req.id.session;
        let Some(q) = self.writer_queues.get_mut(&s) else {
            return;
        };
        let seqno = q.enqueue(req.clone(), now);
        self.emit(
            self.ev(TraceKind::Enqueue)
                .session(s)
                .payload(json!({"queue": format!("writer:{s}"), "seqno": seqno, "request": req})),
        );
        let ql = self.cfg.latencies.queue;
        self.schedule_dispatch(QueueId::Writer(s), ql);
    }

    fn dispatch(&mut self, q: QueueId) -> Result<()> {
        match q {
            QueueId::Writer(s) => {
                let Some(batch) = self.writer_queues.get_mut(&s).and_then(FifoQueue::dispatch) else {
                    return Ok(());
                };
                let payload = batch_payload(&batch, format!("writer:{s}"));
                let inv = self.new_invocation(Invocation::Writer(WriterInv::new(s, &batch)), payload);
                self.step_later(inv);
            }
            QueueId::Distributor => {
                let Some(batch) = self.dist_queue.dispatch() else {
                    return Ok(());
                };
                let payload = batch_payload(&batch, "distributor".into());
                let inv = self.new_invocation(Invocation::Distributor(DistributorInv::new(&batch)), payload);
                self.step_later(inv);
            }
        }
        Ok(())
    }

    fn step(&mut self, inv: InvId) -> Result<()> {
        let kind = match self.invocations.get(&inv) {
            Some(i) => i.kind(),
            None => return Ok(()),
        };
        match kind {
            FunctionKind::Writer => self.writer_step(inv),
            FunctionKind::Distributor => self.distributor_step(inv),
            FunctionKind::Watch => self.watch_step(inv),
            FunctionKind::Heartbeat => self.heartbeat_step(inv),
        }
    }

    pub(crate) fn start_watch(&mut self, input: WatchInput, attempt: u32) {
        let payload = json!({"region": input.region, "txid": input.txid, "watches": input.records, "attempt": attempt});
        let inv = self.new_invocation(Invocation::Watch(WatchInv::new(input, attempt)), payload);
        self.step_later(inv);
    }

    fn heartbeat_tick(&mut self) -> Result<()> {
        let busy = self.sched.pending() > 0;
        if !busy && !self.evictable_exists()? {
            return Ok(());
        }
        let inv = self.new_invocation(Invocation::Heartbeat(HeartbeatInv::default()), json!({}));
        self.step_later(inv);
        let p = self.cfg.heartbeat_period_ticks;
        self.after(p, Action::HeartbeatTick);
        Ok(())
    }

    fn evictable_exists(&self) -> Result<bool> {
        for (id, c) in &self.clients {
            if c.responsive() {
                continue;
            }
            if let Some(rec) = self.session_record(*id)? {
                if rec.status == SessionStatus::Active && !rec.ephemeral.is_empty() {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    pub(crate) fn session_record(&self, s: SessionId) -> Result<Option<crate::storage::SessionRecord>> {
        Ok(self
            .kv
            .read(table::SESSIONS, &session_key(s))?
            .map(|i| crate::storage::SessionRecord::from_item(s, &i)))
    }

    pub(crate) fn node_record(&self, path: &str) -> Result<Option<SystemNodeRecord>> {
        Ok(self
            .kv
            .read(table::NODES, path)?
            .map(|i| SystemNodeRecord::from_item(path, &i)))
    }

    // ---- clients ----

    fn submit(&mut self, i: usize) -> Result<()> {
        let op: WorkloadOp = self.cfg.workload[i].clone();
        let s = op.session;
        let now = self.now();
        let Some(c) = self.clients.get_mut(&s) else {
            return Ok(());
        };
        let seq = c.next_seq();
        if op.op == OpKind::Disconnect {
            self.emit(self.ev(TraceKind::ClientSubmit).session(s).payload(json!({"op": "disconnect"})));
            let fx = self.clients.get_mut(&s).expect("client").disconnect();
            return self.client_effects(s, fx);
        }
        let client_op = match op.op {
            OpKind::Create => ClientOp::Write(WriteOp::Create {
                path: op.path.clone(),
                data: op.data_bytes(),
                ephemeral: op.has_flag("ephemeral"),
                sequential: op.has_flag("sequential"),
            }),
            OpKind::SetData => ClientOp::Write(WriteOp::SetData {
                path: op.path.clone(),
                data: op.data_bytes(),
                version: op.version,
            }),
            OpKind::Delete => ClientOp::Write(WriteOp::Delete {
                path: op.path.clone(),
                version: op.version,
            }),
            OpKind::Close => ClientOp::Write(WriteOp::Deregister),
            OpKind::GetData | OpKind::GetChildren | OpKind::Exists => ClientOp::Read {
                op: op.op,
                path: op.path.clone(),
                watch: op.watch,
            },
            OpKind::Disconnect => unreachable!(),
        };
        let mut p = serde_json::to_value(&op).expect("op serializes");
        p["seq"] = json!(seq);
        p.as_object_mut().map(|m| m.remove("at"));
        let mut e = self.ev(TraceKind::ClientSubmit).session(s).payload(p);
        if !op.path.is_empty() {
            e = e.path(op.path.clone());
        }
        self.emit(e);
        let fx = self.clients.get_mut(&s).expect("client").submit(client_op, now);
        self.client_effects(s, fx)
    }

    pub(crate) fn client_effects(&mut self, s: SessionId, fx: Vec<Effect>) -> Result<()> {
        let now = self.now();
        for e in fx {
            match e {
                Effect::Send(req) => self.enqueue_write(req),
                Effect::StartRead { seq, op, path, watch } => {
                    let stage = if watch {
                        ReadStage::Register
                    } else {
                        ReadStage::Fetch { catch_up: 0 }
                    };
                    let d = self.cfg.latencies.wire;
                    self.after(
                        d,
                        Action::Read {
                            session: s,
                            seq,
                            op,
                            path,
                            watch,
                            stage,
                        },
                    );
                }
                Effect::Wake { at } => self.after(at.saturating_sub(now), Action::Wake(s)),
                Effect::Release(ev) => self.trace_app_event(s, ev),
            }
        }
        Ok(())
    }

    fn trace_app_event(&mut self, s: SessionId, ev: AppEvent) {
        let e = match ev {
            AppEvent::Result {
                seq,
                op,
                path,
                outcome,
                forced,
            } => {
                let mut e = self
                    .ev(TraceKind::ClientResult)
                    .session(s)
                    .payload(json!({"seq": seq, "op": op, "outcome": outcome, "forced": forced}));
                if let Some(t) = outcome.success_txid() {
                    e = e.txid(t);
                }
                if let Some(p) = path {
                    e = e.path(p);
                }
                e
            }
            AppEvent::Observe {
                seq,
                op,
                path,
                mtxid,
                outcome,
            } => self
                .ev(TraceKind::ClientReadObserve)
                .session(s)
                .txid(mtxid)
                .path(path)
                .payload(json!({"seq": seq, "op": op, "outcome": outcome})),
            AppEvent::Notification { notification, forced } => self
                .ev(TraceKind::NotifyReceived)
                .session(s)
                .txid(notification.txid)
                .path(notification.path.clone())
                .payload(json!({"watch": notification.watch_id, "event": notification.event, "forced": forced})),
        };
        self.emit(e);
    }

    fn deliver(&mut self, s: SessionId, msg: Msg) -> Result<()> {
        let now = self.now();
        let Some(c) = self.clients.get_mut(&s) else {
            return Ok(());
        };
        if !c.responsive() {
            return Ok(());
        }
        match msg {
            Msg::Result {
                request,
                outcome,
                snapshot,
            } => {
                let fx = c.on_result(&request, outcome, snapshot, now);
                self.client_effects(s, fx)
            }
            Msg::Notify { inv, notification } => {
                let (w, t) = (notification.watch_id, notification.txid);
                let path = notification.path.clone();
                let (dup, fx) = c.on_notification(notification, now);
                self.emit(
                    self.ev(TraceKind::NotifyWire)
                        .session(s)
                        .txid(t)
                        .path(path)
                        .payload(json!({"watch": w, "duplicate": dup})),
                );
                let d = self.cfg.latencies.wire;
                self.after(
                    d,
                    Action::Ack {
                        inv,
                        session: s,
                        watch: w,
                    },
                );
                self.client_effects(s, fx)
            }
            Msg::Ping { inv } => {
                let d = self.cfg.latencies.wire;
                self.after(d, Action::Pong { inv, session: s });
                Ok(())
            }
        }
    }

    fn read_step(&mut self, s: SessionId, seq: u32, op: OpKind, path: String, watch: bool, stage: ReadStage) -> Result<()> {
        if !self.clients.get(&s).is_some_and(Session::responsive) {
            return Ok(());
        }
        let region = self.clients[&s].region.clone();
        match stage {
            ReadStage::Register => {
                let kind = match op {
                    OpKind::GetData => WatchKind::Data,
                    OpKind::GetChildren => WatchKind::Children,
                    _ => WatchKind::Exists,
                };
                let wid = self.register_watch(s, kind, &path)?;
                let catch_up = self.node_record(&path)?.map(|r| r.image.mtxid).unwrap_or(0);
                self.emit(
                    self.ev(TraceKind::StorageWrite)
                        .session(s)
                        .path(path.clone())
                        .payload(json!({"op": "register-watch", "watch": wid, "kind": kind, "seq": seq, "catch_up": catch_up})),
                );
                self.clients.get_mut(&s).expect("client").on_registered(wid);
                let d = self.cfg.latencies.step;
                self.after(
                    d,
                    Action::Read {
                        session: s,
                        seq,
                        op,
                        path,
                        watch,
                        stage: ReadStage::Fetch { catch_up },
                    },
                );
                Ok(())
            }
            ReadStage::Fetch { catch_up } => {
                let obj = self.user.get(&region, &path)?;
                let mtxid = obj.as_ref().map(|o| o.image.mtxid).unwrap_or(0);
                self.emit(
                    self.ev(TraceKind::StorageRead)
                        .session(s)
                        .txid(mtxid)
                        .path(path.clone())
                        .payload(json!({"op": "obj_get", "region": region, "seq": seq})),
                );
                if mtxid < catch_up {
                    let d = self.cfg.latencies.step;
                    self.after(
                        d,
                        Action::Read {
                            session: s,
                            seq,
                            op,
                            path,
                            watch,
                            stage: ReadStage::Fetch { catch_up },
                        },
                    );
                    return Ok(());
                }
                let live = obj.as_ref().filter(|o| o.live());
                let outcome = match (op, live) {
                    (OpKind::Exists, None) => Outcome::Exists {
                        exists: false,
                        mtxid: None,
                        version: None,
                    },
                    (OpKind::Exists, Some(o)) => Outcome::Exists {
                        exists: true,
                        mtxid: Some(o.image.mtxid),
                        version: Some(o.image.version),
                    },
                    (_, None) => Outcome::NoNode,
                    (OpKind::GetChildren, Some(o)) => Outcome::Children {
                        children: o.image.children.clone(),
                        mtxid: o.image.mtxid,
                    },
                    (_, Some(o)) => Outcome::Data {
                        data: o.image.data.clone(),
                        mtxid: o.image.mtxid,
                        version: o.image.version,
                    },
                };
                let view = ReadView {
                    outcome,
                    mtxid,
                    snapshot: obj.map(|o| o.epoch_snapshot).unwrap_or_default(),
                };
                let now = self.now();
                let fx = self.clients.get_mut(&s).expect("client").on_read(seq, view, now);
                self.client_effects(s, fx)
            }
        }
    }

    /// Subscribes the session to the watch on (kind, path), creating the
    /// watch with a fresh id when none is pending.
    fn register_watch(&mut self, s: SessionId, kind: WatchKind, path: &str) -> Result<WatchId> {
        let key = watch_key(kind, path);
        let existing = self.kv.read(table::WATCHES, &key)?;
        let wid = match existing.as_ref().and_then(|i| i.get(field::ID)).and_then(Value::as_int) {
            Some(id) => {
                let subs = existing
                    .as_ref()
                    .and_then(|i| i.get(field::SUBSCRIBERS))
                    .and_then(Value::as_list)
                    .unwrap_or(&[]);
                if !subs.contains(&Value::Int(s as u64)) {
                    self.kv.conditional_update(
                        table::WATCHES,
                        &key,
                        &Condition::equals(field::ID, id),
                        &[Mutation::append(field::SUBSCRIBERS, vec![Value::Int(s as u64)])],
                    )?;
                }
                id
            }
            None => {
                let id = counter_add(&mut self.kv, WATCH_ID_COUNTER, 1)?;
                self.kv.conditional_update(
                    table::WATCHES,
                    &key,
                    &Condition::ItemAbsent,
                    &[
                        Mutation::set(field::ID, id),
                        Mutation::set(field::SUBSCRIBERS, Value::List(vec![Value::Int(s as u64)])),
                    ],
                )?;
                id
            }
        };
        self.kv.conditional_update(
            table::SESSIONS,
            &session_key(s),
            &Condition::Always,
            &[Mutation::append(field::WATCHES, vec![Value::Int(wid)])],
        )?;
        Ok(wid)
    }

    // ---- snapshot ----

    fn snapshot(&self) -> Result<Json> {
        let mut system = serde_json::Map::new();
        let mut pending = serde_json::Map::new();
        let mut locks = serde_json::Map::new();
        for (path, item) in self.kv.scan(table::NODES)? {
            let r = SystemNodeRecord::from_item(path, item);
            if r.exists() {
                system.insert(path.clone(), serde_json::to_value(&r.image)?);
            }
            if !r.pending.is_empty() {
                pending.insert(path.clone(), json!(r.pending));
            }
            if let Some(ts) = r.lock_ts {
                locks.insert(path.clone(), json!(ts));
            }
        }
        let mut regions = serde_json::Map::new();
        let mut epochs = serde_json::Map::new();
        for r in self.user.regions() {
            let mut tree = serde_json::Map::new();
            for o in self.user.objects(r)? {
                if o.live() {
                    tree.insert(o.path.clone(), serde_json::to_value(&o.image)?);
                }
            }
            regions.insert(r.clone(), Json::Object(tree));
            let ids: Vec<u64> = list_read(&self.kv, &crate::storage::records::epoch_key(r))?
                .iter()
                .filter_map(Value::as_int)
                .collect();
            epochs.insert(r.clone(), json!(ids));
        }
        let mut sessions = serde_json::Map::new();
        for id in self.clients.keys() {
            if let Some(rec) = self.session_record(*id)? {
                sessions.insert(
                    id.to_string(),
                    json!({"status": rec.status, "ephemeral": rec.ephemeral, "client": self.clients[id].status()}),
                );
            }
        }
        let queues_drained =
            self.dist_queue.is_drained() && self.writer_queues.values().all(FifoQueue::is_drained);
        Ok(json!({
            "system": system,
            "pending": pending,
            "locks": locks,
            "regions": regions,
            "epochs": epochs,
            "sessions": sessions,
            "queues_drained": queues_drained,
        }))
    }

    /// Sorted dump of every table and region.
    pub fn dump(&self) -> Result<String> {
        let mut out = String::new();
        for t in table::ALL {
            for (k, item) in self.kv.scan(t)? {
                out.push_str(&format!("{t}\t{k}\t{}\n", serde_json::to_string(item)?));
            }
        }
        for r in self.user.regions() {
            for o in self.user.objects(r)? {
                out.push_str(&format!("region:{r}\t{}\t{}\n", o.path, serde_json::to_string(o)?));
            }
        }
        Ok(out)
    }
}

fn batch_payload<T: serde::Serialize>(batch: &Batch<T>, queue: String) -> Json {
    json!({
        "queue": queue,
        "delivery": batch.delivery_count,
        "batch": batch.messages,
    })
}

/// Set of sessions whose app stream must contain every notification fired
/// to them: those never disconnected nor closed.
pub fn responsive_sessions(trace: &Trace) -> BTreeSet<SessionId> {
    let mut all: BTreeSet<SessionId> = trace
        .of_kind(TraceKind::SessionOpen)
        .filter_map(|(_, e)| e.session)
        .collect();
    for (_, e) in trace.of_kind(TraceKind::ClientSubmit) {
        if e.str_field("op") == Some("disconnect") {
            if let Some(s) = e.session {
                all.remove(&s);
            }
        }
    }
    all
}

/// Runs a scenario to quiescence.
pub fn run_to_quiescence(cfg: &ScenarioConfig) -> Result<Trace> {
    World::new(cfg.clone())?.run()
}

/// Runs a scenario and also returns the final store dump.
pub fn run_with_dump(cfg: &ScenarioConfig) -> Result<(Trace, String)> {
    let mut w = World::new(cfg.clone())?;
    while let Some((_, action)) = w.sched.pop() {
        w.events += 1;
        if w.events > w.cfg.max_events {
            return Err(Error::NonTermination(w.cfg.max_events));
        }
        w.handle(action)?;
    }
    let dump = w.dump()?;
    Ok((w.run()?, dump))
}

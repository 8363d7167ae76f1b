//! Distributor function: finishes commits left behind by writers, pushes
//! node objects to every region, fires watches and acknowledges clients.

use std::collections::{BTreeMap, VecDeque};

use serde_json::json;

use super::watch::WatchInput;
use super::{triggered, DistributorUpdate, FailReason, WatchRecord};
use crate::error::Result;
use crate::model::{NodeImage, Outcome, WatchId};
use crate::queue::Batch;
use crate::sim::fault::{step, FunctionKind, PointAction};
use crate::sim::trace::TraceKind;
use crate::sim::world::{InvId, Invocation, World};
use crate::storage::records::{epoch_key, field, session_key, table, watch_key, DoneMarker};
use crate::storage::{Condition, DataNodeObject, Mutation, TxOp, TxOutcome, Value};
use crate::sync::{commit_legs, list_read, lock_free_condition, Commit};

#[derive(Debug, Clone)]
enum Phase {
    Check,
    DataUpdate(usize),
    InvokeWatch(usize),
    Notify,
    Pop,
}

#[derive(Debug)]
pub struct DistributorInv {
    pub(crate) occurrence: u64,
    pub(crate) delivery_count: u32,
    updates: VecDeque<DistributorUpdate>,
    phase: Phase,
    fired: Vec<WatchRecord>,
    /// Epoch snapshot taken in each region right before its object write.
    snapshots: BTreeMap<String, Vec<WatchId>>,
}

impl DistributorInv {
    pub(crate) fn new(batch: &Batch<DistributorUpdate>) -> Self {
        DistributorInv {
            occurrence: 0,
            delivery_count: batch.delivery_count,
            updates: batch.messages.iter().map(|m| m.payload.clone()).collect(),
            phase: Phase::Check,
            fired: vec![],
            snapshots: BTreeMap::new(),
        }
    }
}

enum Next {
    Step,
    /// The current update is finished; move to the next one.
    Advance,
    Defer,
}

fn deliveries_entries(item: Option<&crate::storage::Item>) -> Option<Vec<WatchRecord>> {
    let s = item?.get(field::ENTRIES)?.as_str()?;
    serde_json::from_str(s).ok()
}

impl World {
    fn take_distributor(&mut self, inv: InvId) -> Option<DistributorInv> {
        match self.invocations.remove(&inv) {
            Some(Invocation::Distributor(d)) => Some(d),
            Some(other) => {
                self.invocations.insert(inv, other);
                None
            }
            None => None,
        }
    }

    pub(crate) fn distributor_step(&mut self, inv: InvId) -> Result<()> {
        let Some(mut d) = self.take_distributor(inv) else {
            return Ok(());
        };
        if d.updates.is_empty() {
            self.invocations.insert(inv, Invocation::Distributor(d));
            self.complete(inv, json!({}));
            return Ok(());
        }
        let label = match d.phase {
            Phase::Check => step::BEFORE_TRYCOMMIT,
            Phase::DataUpdate(_) => step::AFTER_TRYCOMMIT,
            Phase::InvokeWatch(_) => step::AFTER_DATAUPDATE,
            Phase::Notify => step::AFTER_INVOKEWATCH,
            Phase::Pop => step::BEFORE_POPTRANSACTION,
        };
        let action = self.point(FunctionKind::Distributor, d.occurrence, label);
        if action == PointAction::CrashNow {
            self.invocations.insert(inv, Invocation::Distributor(d));
            self.crash(inv, label, "injected");
            return Ok(());
        }
        let next = self.distributor_phase(&mut d)?;
        if matches!(next, Next::Advance) {
            d.updates.pop_front();
            d.phase = Phase::Check;
            d.fired.clear();
            d.snapshots.clear();
        }
        self.invocations.insert(inv, Invocation::Distributor(d));
        if action == PointAction::CrashAfterStep {
            self.crash(inv, label, "injected-after");
            return Ok(());
        }
        match next {
            Next::Step | Next::Advance => self.step_later(inv),
            Next::Defer => self.crash(inv, label, "commit-deferred"),
        }
        Ok(())
    }

    fn distributor_phase(&mut self, d: &mut DistributorInv) -> Result<Next> {
        let u = d.updates.front().expect("current update").clone();
        let regions: Vec<String> = self.cfg.regions.clone();
        match d.phase.clone() {
            Phase::Check => self.try_commit(d, &u),
            Phase::DataUpdate(i) => {
                let region = regions[i].clone();
                if i == 0 || d.fired.is_empty() {
                    d.fired = self.fire_watches(&u)?;
                }
                let ids: Vec<WatchId> = d.fired.iter().map(|w| w.id).collect();
                if !ids.is_empty() {
                    let flag = format!("epoch:{region}");
                    let legs = vec![
                        TxOp::new(
                            table::DELIVERIES,
                            &u.txid.to_string(),
                            Condition::FieldAbsent(flag.clone()),
                            vec![Mutation::Set(flag, Value::Int(1))],
                        ),
                        TxOp::new(
                            table::COUNTERS,
                            &epoch_key(&region),
                            Condition::Always,
                            vec![Mutation::append(field::VALUE, ids.iter().map(|i| Value::Int(*i)).collect())],
                        ),
                    ];
                    let out = self.kv.transact(&legs)?;
                    self.emit(
                        self.ev(TraceKind::StorageWrite)
                            .txid(u.txid)
                            .payload(json!({"op": "epoch-add", "region": region, "ids": ids, "applied": out == TxOutcome::Committed})),
                    );
                }
                let snapshot: Vec<WatchId> = list_read(&self.kv, &epoch_key(&region))?
                    .iter()
                    .filter_map(Value::as_int)
                    .collect();
                for n in &u.nodes {
                    let (image, deleted) = match &n.commit.image {
                        Some(img) => (img.clone(), false),
                        None => (
                            NodeImage {
                                mtxid: u.txid,
                                ..Default::default()
                            },
                            true,
                        ),
                    };
                    self.user.put(
                        &region,
                        DataNodeObject {
                            path: n.commit.path.clone(),
                            image,
                            epoch_snapshot: snapshot.clone(),
                            deleted,
                        },
                    )?;
                    self.emit(
                        self.ev(TraceKind::StorageWrite)
                            .txid(u.txid)
                            .path(n.commit.path.clone())
                            .payload(json!({"op": "obj_put", "region": region, "deleted": deleted, "snapshot": snapshot})),
                    );
                }
                d.snapshots.insert(region, snapshot);
                d.phase = Phase::InvokeWatch(i);
                Ok(Next::Step)
            }
            Phase::InvokeWatch(i) => {
                let region = regions[i].clone();
                if !d.fired.is_empty() {
                    let fired: Vec<WatchId> = d.fired.iter().map(|w| w.id).collect();
                    let snapshot = d.snapshots.get(&region).cloned().unwrap_or_default();
                    let input = WatchInput {
                        region,
                        txid: u.txid,
                        records: d.fired.clone(),
                        snapshot: snapshot.into_iter().filter(|w| !fired.contains(w)).collect(),
                        fired,
                    };
                    self.start_watch(input, 1);
                }
                d.phase = if i + 1 < regions.len() {
                    Phase::DataUpdate(i + 1)
                } else {
                    Phase::Notify
                };
                Ok(Next::Step)
            }
            Phase::Notify => {
                if !u.request.is_silent() {
                    let home = self.cfg.region_of(u.request.session).unwrap_or_default().to_string();
                    let snapshot = d.snapshots.get(&home).cloned().unwrap_or_default();
                    self.notify_result(
                        &u.request,
                        Outcome::Success {
                            txid: Some(u.txid),
                            path: Some(u.path.clone()),
                        },
                        snapshot,
                    );
                }
                d.phase = Phase::Pop;
                Ok(Next::Step)
            }
            Phase::Pop => {
                for n in &u.nodes {
                    let out = self.kv.conditional_update(
                        table::NODES,
                        &n.commit.path,
                        &Condition::head_equals(field::PENDING, u.txid),
                        &[Mutation::PopFront(field::PENDING.into())],
                    )?;
                    self.emit(
                        self.ev(TraceKind::StorageWrite)
                            .txid(u.txid)
                            .path(n.commit.path.clone())
                            .payload(json!({"op": "pop", "applied": out.applied()})),
                    );
                    if n.commit.image.is_none() {
                        let gone = Condition::And(vec![
                            Condition::equals(field::DELETED, 1),
                            Condition::absent(field::LOCK_TS),
                            Condition::Or(vec![
                                Condition::absent(field::PENDING),
                                Condition::equals(field::PENDING, Value::List(vec![])),
                            ]),
                        ]);
                        self.kv
                            .conditional_update(table::NODES, &n.commit.path, &gone, &[Mutation::DeleteItem])?;
                    }
                }
                self.kv.conditional_update(
                    table::DELIVERIES,
                    &u.txid.to_string(),
                    &Condition::Always,
                    &[Mutation::DeleteItem],
                )?;
                Ok(Next::Advance)
            }
        }
    }

    /// Makes sure the update's commit exists, finishing it for a writer that
    /// stopped between push and commit.
    fn try_commit(&mut self, d: &mut DistributorInv, u: &DistributorUpdate) -> Result<Next> {
        let primary = self.node_record(&u.path)?;
        let head = primary.as_ref().and_then(|r| r.pending.first().copied());
        let in_pending = primary.as_ref().is_some_and(|r| r.pending.contains(&u.txid));
        self.emit(
            self.ev(TraceKind::StorageRead)
                .txid(u.txid)
                .path(u.path.clone())
                .payload(json!({"op": "check", "head": head})),
        );
        if head == Some(u.txid) {
            d.phase = Phase::DataUpdate(0);
            return Ok(Next::Step);
        }
        let marker = self
            .session_record(u.request.session)?
            .and_then(|s| s.done.get(&u.request.marker()).cloned());
        if marker == Some(DoneMarker::Committed(u.txid)) && !in_pending {
            // Already distributed; this is a repeated delivery.
            if !u.request.is_silent() {
                let home = self.cfg.region_of(u.request.session).unwrap_or_default().to_string();
                let snapshot = self
                    .user
                    .get(&home, &u.path)?
                    .map(|o| o.epoch_snapshot)
                    .unwrap_or_default();
                self.notify_result(
                    &u.request,
                    Outcome::Success {
                        txid: Some(u.txid),
                        path: Some(u.path.clone()),
                    },
                    snapshot,
                );
            }
            return Ok(Next::Advance);
        }
        let now = self.now();
        let max_hold = self.cfg.lock_max_hold_ticks;
        let bases: BTreeMap<String, Option<u64>> = u.nodes.iter().map(|n| (n.commit.path.clone(), n.base)).collect();
        let guard = |n: &crate::sync::NodeCommit| {
            let stamp = match bases[&n.path] {
                Some(b) => Condition::equals(field::MTXID, b),
                None => Condition::absent(field::MTXID),
            };
            Condition::Or(vec![
                n.holder_guard(),
                Condition::And(vec![lock_free_condition(now, max_hold), stamp]),
            ])
        };
        let legs = commit_legs(&u.commits(), u.txid, guard, u.extra_legs(self.cfg.queue_mode));
        let out = match self.kv.transact(&legs)? {
            TxOutcome::Committed => Commit::Committed,
            TxOutcome::Rejected { .. } => Commit::Lost,
        };
        if out == Commit::Committed {
            self.trace_commit(u, "distributor");
            d.phase = Phase::DataUpdate(0);
            return Ok(Next::Step);
        }
        let live_other = u.nodes.iter().try_fold(false, |acc, n| -> Result<bool> {
            let r = self.node_record(&n.commit.path)?;
            let other = r
                .and_then(|r| r.lock_ts)
                .is_some_and(|ts| Some(ts) != n.commit.holder_ts && (now <= max_hold || ts >= now - max_hold));
            Ok(acc || other)
        })?;
        if live_other {
            return Ok(Next::Defer);
        }
        let marker_key = u.request.marker();
        let reason = FailReason::CommitLost.as_str();
        let applied = self
            .kv
            .conditional_update(
                table::SESSIONS,
                &session_key(u.request.session),
                &Condition::FieldAbsent(marker_key.clone()),
                &[Mutation::Set(marker_key, DoneMarker::Failed(reason.into()).to_value())],
            )?
            .applied();
        self.emit(
            self.ev(TraceKind::StorageWrite)
                .session(u.request.session)
                .txid(u.txid)
                .payload(json!({"op": "fail-marker", "request": u.request.to_string(), "reason": reason, "applied": applied})),
        );
        self.notify_client_failure(&u.request, reason);
        Ok(Next::Advance)
    }

    /// Removes the watch registrations the update fires and records them
    /// under the txid, so a retry fires the same set.
    fn fire_watches(&mut self, u: &DistributorUpdate) -> Result<Vec<WatchRecord>> {
        let key = u.txid.to_string();
        if let Some(recs) = deliveries_entries(self.kv.read(table::DELIVERIES, &key)?.as_ref()) {
            return Ok(recs);
        }
        let mut recs = vec![];
        let mut legs = vec![];
        for (kind, path, event) in triggered(u.kind, &u.path) {
            let wk = watch_key(kind, &path);
            let Some(item) = self.kv.read(table::WATCHES, &wk)? else {
                continue;
            };
            let Some(id) = item.get(field::ID).and_then(Value::as_int) else {
                continue;
            };
            let subscribers = item
                .get(field::SUBSCRIBERS)
                .and_then(Value::as_list)
                .unwrap_or(&[])
                .iter()
                .filter_map(|v| v.as_int().map(|s| s as crate::model::SessionId))
                .collect();
            legs.push(TxOp::new(
                table::WATCHES,
                &wk,
                Condition::equals(field::ID, id),
                vec![Mutation::DeleteItem],
            ));
            recs.push(WatchRecord {
                id,
                path,
                watch: kind,
                event,
                subscribers,
            });
        }
        let encoded = serde_json::to_string(&recs)?;
        legs.insert(
            0,
            TxOp::new(
                table::DELIVERIES,
                &key,
                Condition::absent(field::ENTRIES),
                vec![Mutation::set(field::ENTRIES, Value::Str(encoded))],
            ),
        );
        match self.kv.transact(&legs)? {
            TxOutcome::Committed => {}
            TxOutcome::Rejected { .. } => {
                return Ok(deliveries_entries(self.kv.read(table::DELIVERIES, &key)?.as_ref()).unwrap_or_default())
            }
        }
        if !recs.is_empty() {
            self.emit(
                self.ev(TraceKind::WatchFired)
                    .txid(u.txid)
                    .path(u.path.clone())
                    .payload(json!({"watches": recs})),
            );
        }
        Ok(recs)
    }
}

//! Watch function: delivers the notifications of one update in one region,
//! then retires the update's watch ids from the region's epoch list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::WatchRecord;
use crate::client::Notification;
use crate::error::Result;
use crate::model::{SessionId, Txid, WatchId};
use crate::sim::fault::{step, FunctionKind, PointAction};
use crate::sim::trace::TraceKind;
use crate::sim::world::{Action, InvId, Invocation, Msg, World};
use crate::storage::records::epoch_key;
use crate::storage::Value;
use crate::sync::{list_update, ListOp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchInput {
    pub region: String,
    pub txid: Txid,
    pub records: Vec<WatchRecord>,
    /// Region epoch at object-write time, without the fired ids.
    pub snapshot: Vec<WatchId>,
    pub fired: Vec<WatchId>,
}

#[derive(Debug, Clone)]
enum Phase {
    Deliver,
    Await { waiting: BTreeSet<(SessionId, WatchId)>, deadline: u64 },
    Retire,
}

#[derive(Debug)]
pub struct WatchInv {
    pub(crate) occurrence: u64,
    pub(crate) attempt: u32,
    pub(crate) input: WatchInput,
    phase: Phase,
}

impl WatchInv {
    pub(crate) fn new(input: WatchInput, attempt: u32) -> Self {
        WatchInv {
            occurrence: 0,
            attempt,
            input,
            phase: Phase::Deliver,
        }
    }
}

impl World {
    fn watch_inv(&mut self, inv: InvId) -> Option<&mut WatchInv> {
        match self.invocations.get_mut(&inv) {
            Some(Invocation::Watch(w)) => Some(w),
            _ => None,
        }
    }

    pub(crate) fn watch_step(&mut self, inv: InvId) -> Result<()> {
        let now = self.now();
        let Some(w) = self.watch_inv(inv) else {
            return Ok(());
        };
        let occurrence = w.occurrence;
        match w.phase.clone() {
            Phase::Deliver => {
                let action = self.point(FunctionKind::Watch, occurrence, step::BEFORE_DELIVER);
                if action == PointAction::CrashNow {
                    self.crash(inv, step::BEFORE_DELIVER, "injected");
                    return Ok(());
                }
                let input = self.watch_inv(inv).expect("watch").input.clone();
                let mut waiting = BTreeSet::new();
                for r in &input.records {
                    for s in &r.subscribers {
                        if self.cfg.region_of(*s) != Some(input.region.as_str()) {
                            continue;
                        }
                        let n = Notification {
                            watch_id: r.id,
                            path: r.path.clone(),
                            event: r.event,
                            txid: input.txid,
                            snapshot: input.snapshot.clone(),
                            fired: input.fired.clone(),
                        };
                        self.emit(
                            self.ev(TraceKind::NotifySent)
                                .session(*s)
                                .txid(input.txid)
                                .path(r.path.clone())
                                .payload(json!({"watch": r.id, "event": r.event, "region": input.region})),
                        );
                        self.send(*s, Msg::Notify { inv, notification: n });
                        waiting.insert((*s, r.id));
                    }
                }
                if action == PointAction::CrashAfterStep {
                    self.crash(inv, step::BEFORE_DELIVER, "injected-after");
                    return Ok(());
                }
                let timeout = self.cfg.ack_timeout_ticks;
                let w = self.watch_inv(inv).expect("watch");
                if waiting.is_empty() {
                    w.phase = Phase::Retire;
                    self.step_later(inv);
                } else {
                    w.phase = Phase::Await {
                        waiting,
                        deadline: now + timeout,
                    };
                    self.after(timeout, Action::Step(inv));
                }
            }
            Phase::Await { waiting, deadline } => {
                // Acks may still arrive; the timeout gives up on silent clients.
                if now >= deadline {
                    if !waiting.is_empty() {
                        self.emit(
                            self.ev(TraceKind::StorageRead)
                                .payload(json!({"op": "ack-timeout", "inv": inv, "missing": waiting.iter().map(|(s, w)| json!([s, w])).collect::<Vec<_>>()})),
                        );
                    }
                    self.watch_inv(inv).expect("watch").phase = Phase::Retire;
                    self.step_later(inv);
                }
            }
            Phase::Retire => {
                let action = self.point(FunctionKind::Watch, occurrence, step::AFTER_DELIVER);
                if action == PointAction::CrashNow {
                    self.crash(inv, step::AFTER_DELIVER, "injected");
                    return Ok(());
                }
                let input = self.watch_inv(inv).expect("watch").input.clone();
                let key = epoch_key(&input.region);
                for id in &input.fired {
                    list_update(&mut self.kv, &key, ListOp::Remove(Value::Int(*id)))?;
                }
                self.emit(
                    self.ev(TraceKind::StorageWrite)
                        .txid(input.txid)
                        .payload(json!({"op": "epoch-remove", "region": input.region, "ids": input.fired})),
                );
                if action == PointAction::CrashAfterStep {
                    self.crash(inv, step::AFTER_DELIVER, "injected-after");
                    return Ok(());
                }
                self.complete(inv, json!({"region": input.region, "txid": input.txid}));
            }
        }
        Ok(())
    }

    pub(crate) fn watch_ack(&mut self, inv: InvId, session: SessionId, watch: WatchId) {
        let Some(w) = self.watch_inv(inv) else {
            return;
        };
        if let Phase::Await { waiting, .. } = &mut w.phase {
            waiting.remove(&(session, watch));
            if waiting.is_empty() {
                w.phase = Phase::Retire;
                self.step_later(inv);
            }
        }
    }
}

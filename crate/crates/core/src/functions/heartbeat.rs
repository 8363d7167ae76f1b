//! Heartbeat function: pings sessions that own ephemeral nodes and evicts
//! the ones that stay silent.

use std::collections::BTreeSet;

use serde_json::json;

use super::{WriteOp, WriteRequest};
use crate::error::Result;
use crate::model::{RequestId, SessionId};
use crate::sim::fault::{step, FunctionKind, PointAction};
use crate::sim::trace::TraceKind;
use crate::sim::world::{Action, InvId, Invocation, Msg, World};
use crate::storage::records::{field, session_key, table, SessionStatus};
use crate::storage::{Condition, Mutation, SessionRecord};

#[derive(Debug, Clone, Default)]
enum Phase {
    #[default]
    Ping,
    Evict,
}

#[derive(Debug, Default)]
pub struct HeartbeatInv {
    pub(crate) occurrence: u64,
    phase: Phase,
    pinged: Vec<SessionId>,
    awaiting: BTreeSet<SessionId>,
    evicted: Vec<SessionId>,
}

impl World {
    fn heartbeat_inv(&mut self, inv: InvId) -> Option<&mut HeartbeatInv> {
        match self.invocations.get_mut(&inv) {
            Some(Invocation::Heartbeat(h)) => Some(h),
            _ => None,
        }
    }

    pub(crate) fn heartbeat_step(&mut self, inv: InvId) -> Result<()> {
        let Some(h) = self.heartbeat_inv(inv) else {
            return Ok(());
        };
        let occurrence = h.occurrence;
        match h.phase {
            Phase::Ping => {
                let action = self.point(FunctionKind::Heartbeat, occurrence, step::BEFORE_PING);
                if action == PointAction::CrashNow {
                    self.crash(inv, step::BEFORE_PING, "injected");
                    return Ok(());
                }
                let targets: Vec<SessionId> = self
                    .kv
                    .scan(table::SESSIONS)?
                    .filter_map(|(k, item)| {
                        let id: SessionId = k.parse().ok()?;
                        let r = SessionRecord::from_item(id, item);
                        (r.status == SessionStatus::Active && !r.ephemeral.is_empty()).then_some(id)
                    })
                    .collect();
                for s in &targets {
                    self.send(*s, Msg::Ping { inv });
                }
                if action == PointAction::CrashAfterStep {
                    self.crash(inv, step::BEFORE_PING, "injected-after");
                    return Ok(());
                }
                let h = self.heartbeat_inv(inv).expect("heartbeat");
                h.pinged = targets.clone();
                h.awaiting = targets.iter().copied().collect();
                if targets.is_empty() {
                    self.complete(inv, json!({"pinged": [], "evicted": []}));
                } else {
                    h.phase = Phase::Evict;
                    let t = self.cfg.ping_timeout_ticks;
                    self.after(t, Action::Step(inv));
                }
            }
            Phase::Evict => {
                let silent: Vec<SessionId> = h.awaiting.iter().copied().collect();
                for s in silent {
                    let action = self.point(FunctionKind::Heartbeat, occurrence, step::BEFORE_EVICT);
                    if action == PointAction::CrashNow {
                        self.crash(inv, step::BEFORE_EVICT, "injected");
                        return Ok(());
                    }
                    self.evict(inv, s)?;
                    if action == PointAction::CrashAfterStep {
                        self.crash(inv, step::BEFORE_EVICT, "injected-after");
                        return Ok(());
                    }
                }
                let h = self.heartbeat_inv(inv).expect("heartbeat");
                let payload = json!({"pinged": h.pinged, "evicted": h.evicted});
                self.complete(inv, payload);
            }
        }
        Ok(())
    }

    /// Marks the session as evicting and queues its deregistration in one
    /// step, so a session is evicted at most once.
    fn evict(&mut self, inv: InvId, s: SessionId) -> Result<()> {
        let out = self.kv.conditional_update(
            table::SESSIONS,
            &session_key(s),
            &Condition::equals(field::STATUS, SessionStatus::Active.as_str()),
            &[Mutation::set(field::STATUS, SessionStatus::Evicting.as_str())],
        )?;
        if !out.applied() {
            return Ok(());
        }
        self.emit(self.ev(TraceKind::SessionEvicted).session(s));
        self.enqueue_write(WriteRequest {
            id: RequestId::new(s, 0),
            op: WriteOp::Deregister,
        });
        if let Some(h) = self.heartbeat_inv(inv) {
            h.evicted.push(s);
        }
        Ok(())
    }

    pub(crate) fn heartbeat_pong(&mut self, inv: InvId, s: SessionId) {
        if let Some(h) = self.heartbeat_inv(inv) {
            h.awaiting.remove(&s);
        }
    }
}

//! Timed locks, atomic counters and atomic lists on top of the system
//! store's conditional updates.
//!
//! A lock is a `lock_ts` attribute on the node record. It is acquired when no
//! timestamp is present or when the holder's timestamp is older than
//! `max_hold`; every holder update is conditioned on the stored timestamp, so
//! a displaced holder can no longer change the record.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{NodeImage, Txid};
use crate::storage::records::{field, image_mutations, table, tombstone_mutations, SystemNodeRecord};
use crate::storage::{CmpOp, Condition, KvStore, Mutation, TxOp, TxOutcome, UpdateOutcome, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockAcquire {
    pub acquired: bool,
    /// Record as it was right before the acquire attempt.
    pub old: Option<SystemNodeRecord>,
}

/// Free, or held longer than `max_hold` (strictly).
pub fn lock_free_condition(now: u64, max_hold: u64) -> Condition {
    let mut alts = vec![Condition::absent(field::LOCK_TS)];
    if now > max_hold {
        alts.push(Condition::compare(field::LOCK_TS, CmpOp::Lt, now - max_hold));
    }
    Condition::Or(alts)
}

pub fn lock_acquire(kv: &mut KvStore, path: &str, now: u64, max_hold: u64) -> Result<LockAcquire> {
    assert!(max_hold > 0, "lock max hold must be positive");
    let old = kv
        .read(table::NODES, path)?
        .map(|i| SystemNodeRecord::from_item(path, &i));
    let out = kv.conditional_update(
        table::NODES,
        path,
        &lock_free_condition(now, max_hold),
        &[Mutation::set(field::LOCK_TS, now)],
    )?;
    Ok(LockAcquire {
        acquired: out.applied(),
        old,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Release {
    Released,
    Lost,
}

/// Removes the lock iff it is still ours. A record that only existed to
/// carry the lock is dropped entirely.
pub fn lock_release(kv: &mut KvStore, path: &str, holder_ts: u64) -> Result<Release> {
    let held = Condition::equals(field::LOCK_TS, holder_ts);
    let placeholder = Condition::And(vec![held.clone(), Condition::absent(field::CTXID)]);
    if kv
        .conditional_update(table::NODES, path, &placeholder, &[Mutation::DeleteItem])?
        .applied()
    {
        return Ok(Release::Released);
    }
    let out = kv.conditional_update(table::NODES, path, &held, &[Mutation::remove(field::LOCK_TS)])?;
    Ok(if out.applied() {
        Release::Released
    } else {
        Release::Lost
    })
}

/// New state of one locked node inside a commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCommit {
    pub path: String,
    /// Lock timestamp the committer holds on this node. `None` for a fresh
    /// sequential child, which is guarded by being unlocked and uncreated.
    pub holder_ts: Option<u64>,
    /// `None` turns the node into a tombstone.
    pub image: Option<NodeImage>,
    /// New sequential-child counter, when it changed.
    pub seq_counter: Option<u64>,
}

impl NodeCommit {
    /// Guard used by the lock holder itself.
    pub fn holder_guard(&self) -> Condition {
        match self.holder_ts {
            Some(ts) => Condition::equals(field::LOCK_TS, ts),
            None => Condition::And(vec![
                Condition::absent(field::LOCK_TS),
                Condition::Or(vec![Condition::absent(field::CTXID), Condition::equals(field::DELETED, 1)]),
            ]),
        }
    }

    fn mutations(&self, txid: Txid) -> Vec<Mutation> {
        let mut m = match &self.image {
            Some(img) => image_mutations(img),
            None => tombstone_mutations(txid),
        };
        if let Some(seq) = self.seq_counter {
            m.push(Mutation::set(field::SEQ, seq));
        }
        m.push(Mutation::append(field::PENDING, vec![Value::Int(txid)]));
        m.push(Mutation::remove(field::LOCK_TS));
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Commit {
    Committed,
    Lost,
}

/// Applies every node's new version, appends `txid` to each node's pending
/// list and releases the locks, all conditioned on each node's lock still
/// carrying its holder timestamp. `extra` legs (session markers, counters)
/// join the same transaction.
pub fn commit_unlock(kv: &mut KvStore, nodes: &[NodeCommit], txid: Txid, extra: Vec<TxOp>) -> Result<Commit> {
    let legs = commit_legs(nodes, txid, NodeCommit::holder_guard, extra);
    Ok(match kv.transact(&legs)? {
        TxOutcome::Committed => Commit::Committed,
        TxOutcome::Rejected { .. } => Commit::Lost,
    })
}

/// Commit legs with a caller-chosen per-node guard; the distributor uses
/// this to finish a commit on a writer's behalf.
pub fn commit_legs(
    nodes: &[NodeCommit],
    txid: Txid,
    guard: impl Fn(&NodeCommit) -> Condition,
    extra: Vec<TxOp>,
) -> Vec<TxOp> {
    let mut legs: Vec<TxOp> = nodes
        .iter()
        .map(|n| TxOp::new(table::NODES, &n.path, guard(n), n.mutations(txid)))
        .collect();
    legs.extend(extra);
    legs
}

pub fn counter_add(kv: &mut KvStore, name: &str, delta: u64) -> Result<u64> {
    match kv.conditional_update(
        table::COUNTERS,
        name,
        &Condition::Always,
        &[Mutation::Add(field::VALUE.into(), delta)],
    )? {
        UpdateOutcome::Applied(Some(item)) => Ok(item[field::VALUE].as_int().unwrap_or(0)),
        _ => unreachable!("unconditional counter update"),
    }
}

pub fn counter_read(kv: &KvStore, name: &str) -> Result<u64> {
    Ok(kv
        .read(table::COUNTERS, name)?
        .and_then(|i| i.get(field::VALUE).and_then(Value::as_int))
        .unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ListOp {
    Append(Vec<Value>),
    PopFront,
    Remove(Value),
}

/// Atomic structural update of a list counter; returns the new contents.
pub fn list_update(kv: &mut KvStore, name: &str, op: ListOp) -> Result<Vec<Value>> {
    let m = match op {
        ListOp::Append(vs) => Mutation::append(field::VALUE, vs),
        ListOp::PopFront => Mutation::PopFront(field::VALUE.into()),
        ListOp::Remove(v) => Mutation::RemoveValue(field::VALUE.into(), v),
    };
    match kv.conditional_update(table::COUNTERS, name, &Condition::Always, &[m])? {
        UpdateOutcome::Applied(Some(item)) => Ok(item
            .get(field::VALUE)
            .and_then(Value::as_list)
            .map(<[Value]>::to_vec)
            .unwrap_or_default()),
        _ => unreachable!("unconditional list update"),
    }
}

pub fn list_read(kv: &KvStore, name: &str) -> Result<Vec<Value>> {
    Ok(kv
        .read(table::COUNTERS, name)?
        .and_then(|i| i.get(field::VALUE).and_then(Value::as_list).map(<[Value]>::to_vec))
        .unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn kv() -> KvStore {
        KvStore::with_tables(&table::ALL)
    }

    fn lock_ts(kv: &KvStore, path: &str) -> Option<u64> {
        kv.read(table::NODES, path)
            .unwrap()
            .and_then(|i| i.get(field::LOCK_TS).and_then(Value::as_int))
    }

    #[test]
    fn acquire_table() {
        let mut s = kv();
        assert!(lock_acquire(&mut s, "/a", 10, 20).unwrap().acquired);

        let mut s = kv();
        lock_acquire(&mut s, "/a", 5, 20).unwrap();
        assert!(!lock_acquire(&mut s, "/a", 10, 20).unwrap().acquired);
        assert_eq!(lock_ts(&s, "/a"), Some(5));

        // Expired holder displaced.
        assert!(lock_acquire(&mut s, "/a", 30, 20).unwrap().acquired);
        assert_eq!(lock_ts(&s, "/a"), Some(30));
    }

    #[test]
    fn equal_difference_does_not_displace() {
        let mut s = kv();
        lock_acquire(&mut s, "/a", 5, 20).unwrap();
        assert!(!lock_acquire(&mut s, "/a", 25, 20).unwrap().acquired);
        assert!(lock_acquire(&mut s, "/a", 26, 20).unwrap().acquired);
    }

    #[test]
    fn acquire_returns_prior_snapshot() {
        let mut s = kv();
        let img = NodeImage {
            data: b"x".to_vec(),
            ctxid: 1,
            mtxid: 1,
            ..Default::default()
        };
        s.conditional_update(table::NODES, "/a", &Condition::Always, &image_mutations(&img))
            .unwrap();
        let got = lock_acquire(&mut s, "/a", 3, 10).unwrap();
        assert!(got.acquired);
        let old = got.old.unwrap();
        assert_eq!(old.image, img);
        assert_eq!(old.lock_ts, None);
    }

    #[test]
    fn release_semantics() {
        let mut s = kv();
        s.conditional_update(table::NODES, "/a", &Condition::Always, &[Mutation::set(field::CTXID, 1)])
            .unwrap();
        lock_acquire(&mut s, "/a", 5, 10).unwrap();
        assert_eq!(lock_release(&mut s, "/a", 5).unwrap(), Release::Released);
        assert_eq!(lock_release(&mut s, "/a", 5).unwrap(), Release::Lost);

        lock_acquire(&mut s, "/a", 5, 10).unwrap();
        lock_acquire(&mut s, "/a", 20, 10).unwrap();
        assert_eq!(lock_release(&mut s, "/a", 5).unwrap(), Release::Lost);
        assert_eq!(lock_ts(&s, "/a"), Some(20));
        assert_eq!(lock_release(&mut s, "/missing", 5).unwrap(), Release::Lost);
    }

    #[test]
    fn placeholder_lock_is_dropped_on_release() {
        let mut s = kv();
        lock_acquire(&mut s, "/new", 1, 10).unwrap();
        assert!(s.read(table::NODES, "/new").unwrap().is_some());
        lock_release(&mut s, "/new", 1).unwrap();
        assert!(s.read(table::NODES, "/new").unwrap().is_none());
    }

    fn commit(path: &str, ts: u64, data: &[u8], txid: Txid) -> NodeCommit {
        NodeCommit {
            path: path.into(),
            holder_ts: Some(ts),
            image: Some(NodeImage {
                data: data.to_vec(),
                ctxid: 1,
                mtxid: txid,
                ..Default::default()
            }),
            seq_counter: None,
        }
    }

    fn record(s: &KvStore, path: &str) -> SystemNodeRecord {
        SystemNodeRecord::from_item(path, &s.read(table::NODES, path).unwrap().unwrap())
    }

    #[test]
    fn commit_appends_pending_and_unlocks() {
        let mut s = kv();
        lock_acquire(&mut s, "/a", 1, 10).unwrap();
        let out = commit_unlock(&mut s, &[commit("/a", 1, b"v1", 4)], 4, vec![]).unwrap();
        assert_eq!(out, Commit::Committed);
        lock_acquire(&mut s, "/a", 2, 10).unwrap();
        commit_unlock(&mut s, &[commit("/a", 2, b"v2", 6)], 6, vec![]).unwrap();
        let rec = record(&s, "/a");
        assert_eq!(rec.pending, vec![4, 6]);
        assert_eq!(rec.lock_ts, None);
        assert_eq!(rec.image.data, b"v2");
    }

    #[test]
    fn expired_lock_commit_is_lost_and_changes_nothing() {
        let mut s = kv();
        lock_acquire(&mut s, "/a", 1, 10).unwrap();
        lock_acquire(&mut s, "/a", 50, 10).unwrap();
        let before = s.read(table::NODES, "/a").unwrap();
        let out = commit_unlock(&mut s, &[commit("/a", 1, b"stale", 3)], 3, vec![]).unwrap();
        assert_eq!(out, Commit::Lost);
        assert_eq!(s.read(table::NODES, "/a").unwrap(), before);
    }

    #[test]
    fn multi_node_commit_fails_together() {
        let mut s = kv();
        lock_acquire(&mut s, "/", 1, 10).unwrap();
        lock_acquire(&mut s, "/c", 1, 10).unwrap();
        lock_acquire(&mut s, "/c", 30, 10).unwrap(); // child lock stolen
        let out = commit_unlock(&mut s, &[commit("/", 1, b"", 5), commit("/c", 1, b"c", 5)], 5, vec![]).unwrap();
        assert_eq!(out, Commit::Lost);
        assert_eq!(lock_ts(&s, "/"), Some(1));
    }

    #[test]
    fn counters_and_lists() {
        let mut s = kv();
        assert_eq!(counter_add(&mut s, "state", 1).unwrap(), 1);
        for _ in 0..99 {
            counter_add(&mut s, "state", 1).unwrap();
        }
        assert_eq!(counter_read(&s, "state").unwrap(), 100);

        assert_eq!(list_update(&mut s, "l", ListOp::Append(vec![5u64.into()])).unwrap(), vec![Value::Int(5)]);
        list_update(&mut s, "l", ListOp::Append(vec![7u64.into()])).unwrap();
        assert_eq!(list_update(&mut s, "l", ListOp::PopFront).unwrap(), vec![Value::Int(7)]);
        list_update(&mut s, "l", ListOp::PopFront).unwrap();
        assert!(matches!(list_update(&mut s, "l", ListOp::PopFront), Err(Error::EmptyListPop { .. })));
    }

    #[test]
    fn epoch_remove_restores_multiset() {
        let mut s = kv();
        list_update(&mut s, "epoch:r", ListOp::Append(vec![1u64.into(), 2u64.into()])).unwrap();
        let before = list_read(&s, "epoch:r").unwrap();
        list_update(&mut s, "epoch:r", ListOp::Append(vec![9u64.into()])).unwrap();
        assert_eq!(list_update(&mut s, "epoch:r", ListOp::Remove(9u64.into())).unwrap(), before);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Step {
            Acquire(usize),
            Release(usize),
            Commit(usize),
        }

        fn step() -> impl Strategy<Value = (u64, Step)> {
            (0u64..8, 0usize..4, 0u8..3).prop_map(|(dt, who, k)| {
                (
                    dt,
                    match k {
                        0 => Step::Acquire(who),
                        1 => Step::Release(who),
                        _ => Step::Commit(who),
                    },
                )
            })
        }

        proptest! {
            #[test]
            fn mutual_exclusion_and_stale_holder_safety(max_hold in 1u64..12, steps in proptest::collection::vec(step(), 1..80)) {
                let mut s = kv();
                let mut now = 1;
                // Actor -> timestamp of its latest successful acquire.
                let mut held: [Option<u64>; 4] = [None; 4];
                let mut live: Option<(usize, u64)> = None;
                let mut txid = 0;
                for (dt, st) in steps {
                    now += dt;
                    match st {
                        Step::Acquire(who) => {
                            let got = lock_acquire(&mut s, "/n", now, max_hold).unwrap().acquired;
                            let free = match live {
                                None => true,
                                Some((_, ts)) => now - ts > max_hold,
                            };
                            prop_assert_eq!(got, free);
                            if got {
                                held[who] = Some(now);
                                live = Some((who, now));
                            }
                        }
                        Step::Release(who) => {
                            let Some(ts) = held[who] else { continue };
                            let out = lock_release(&mut s, "/n", ts).unwrap();
                            let ours = live.map(|(_, l)| l) == Some(ts);
                            prop_assert_eq!(out == Release::Released, ours);
                            if ours {
                                live = None;
                            }
                            held[who] = None;
                        }
                        Step::Commit(who) => {
                            let Some(ts) = held[who] else { continue };
                            txid += 1;
                            let before = s.read(table::NODES, "/n").unwrap();
                            let c = NodeCommit {
                                path: "/n".into(),
                                holder_ts: Some(ts),
                                image: Some(NodeImage { ctxid: 1, mtxid: txid, ..Default::default() }),
                                seq_counter: None,
                            };
                            let out = commit_unlock(&mut s, &[c], txid, vec![]).unwrap();
                            let ours = live.map(|(_, l)| l) == Some(ts);
                            prop_assert_eq!(out == Commit::Committed, ours);
                            if ours {
                                live = None;
                            } else {
                                prop_assert_eq!(s.read(table::NODES, "/n").unwrap(), before);
                            }
                            held[who] = None;
                        }
                    }
                }
            }

            #[test]
            fn counter_history_is_linear(deltas in proptest::collection::vec(0u64..5, 0..100)) {
                let mut s = kv();
                let mut last = 0;
                for d in &deltas {
                    let v = counter_add(&mut s, "c", *d).unwrap();
                    prop_assert_eq!(v, last + d);
                    last = v;
                }
                prop_assert_eq!(counter_read(&s, "c").unwrap(), deltas.iter().sum::<u64>());
            }
        }
    }
}

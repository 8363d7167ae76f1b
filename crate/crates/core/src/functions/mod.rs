//! The protocol functions. Types, validation and update planning live here;
//! the step machines driven by the simulator live in the submodules.

pub mod distributor;
pub mod heartbeat;
pub mod watch;
pub mod writer;

use serde::{Deserialize, Serialize};

use crate::model::{name_of, parent_of, sequential_name, NodeImage, RequestId, SessionId, Txid, WatchEvent, WatchId, WatchKind, ROOT};
use crate::queue::QueueMode;
use crate::storage::records::{field, session_key, table, DoneMarker, SystemNodeRecord, STATE_COUNTER};
use crate::storage::{Condition, Mutation, TxOp, Value};
use crate::sync::NodeCommit;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WriteOp {
    Create {
        path: String,
        #[serde(with = "crate::b64")]
        data: Vec<u8>,
        #[serde(default)]
        ephemeral: bool,
        #[serde(default)]
        sequential: bool,
    },
    SetData {
        path: String,
        #[serde(with = "crate::b64")]
        data: Vec<u8>,
        #[serde(default)]
        version: Option<u64>,
    },
    Delete {
        path: String,
        #[serde(default)]
        version: Option<u64>,
    },
    /// Closes the session after deleting its ephemeral nodes.
    Deregister,
}

impl WriteOp {
    pub fn path(&self) -> Option<&str> {
        match self {
            WriteOp::Create { path, .. } | WriteOp::SetData { path, .. } | WriteOp::Delete { path, .. } => Some(path),
            WriteOp::Deregister => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WriteOp::Create { .. } => "create",
            WriteOp::SetData { .. } => "set_data",
            WriteOp::Delete { .. } => "delete",
            WriteOp::Deregister => "close",
        }
    }

    /// Paths to lock, ancestors first.
    pub fn lock_paths(&self) -> Vec<String> {
        match self {
            WriteOp::Create { path, sequential, .. } => match parent_of(path) {
                Some(p) if *sequential => vec![p.to_string()],
                Some(p) => vec![p.to_string(), path.clone()],
                None => vec![path.clone()],
            },
            WriteOp::SetData { path, .. } => vec![path.clone()],
            WriteOp::Delete { path, .. } => match parent_of(path) {
                Some(p) => vec![p.to_string(), path.clone()],
                None => vec![path.clone()],
            },
            WriteOp::Deregister => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRequest {
    pub id: RequestId,
    #[serde(flatten)]
    pub op: WriteOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailReason {
    NodeExists,
    NoNode,
    BadVersion,
    NotEmpty,
    NoParent,
    NoChildrenForEphemerals,
    BadArguments,
    SessionExpired,
    /// The distributor could not complete a commit the writer left behind.
    CommitLost,
}

impl FailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailReason::NodeExists => "node-exists",
            FailReason::NoNode => "no-node",
            FailReason::BadVersion => "bad-version",
            FailReason::NotEmpty => "not-empty",
            FailReason::NoParent => "no-parent",
            FailReason::NoChildrenForEphemerals => "no-children-for-ephemerals",
            FailReason::BadArguments => "bad-arguments",
            FailReason::SessionExpired => "session-expired",
            FailReason::CommitLost => "commit-lost",
        }
    }
}

fn live(r: Option<&SystemNodeRecord>) -> Option<&SystemNodeRecord> {
    r.filter(|r| r.exists())
}

/// Checks a request against the locked state. `node` is the record of the
/// target path (for sequential creates, of the generated name).
pub fn is_valid(op: &WriteOp, node: Option<&SystemNodeRecord>, parent: Option<&SystemNodeRecord>) -> Result<(), FailReason> {
    let node = live(node);
    let parent = live(parent);
    match op {
        WriteOp::Create { path, .. } => {
            if path == ROOT || node.is_some() {
                return Err(FailReason::NodeExists);
            }
            let p = parent.ok_or(FailReason::NoParent)?;
            if p.image.ephemeral_owner.is_some() {
                return Err(FailReason::NoChildrenForEphemerals);
            }
            Ok(())
        }
        WriteOp::SetData { version, .. } => {
            let n = node.ok_or(FailReason::NoNode)?;
            match version {
                Some(v) if *v != n.image.version => Err(FailReason::BadVersion),
                _ => Ok(()),
            }
        }
        WriteOp::Delete { path, version } => {
            if path == ROOT {
                return Err(FailReason::BadArguments);
            }
            let n = node.ok_or(FailReason::NoNode)?;
            if version.is_some_and(|v| v != n.image.version) {
                return Err(FailReason::BadVersion);
            }
            if !n.image.children.is_empty() {
                return Err(FailReason::NotEmpty);
            }
            Ok(())
        }
        WriteOp::Deregister => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    Create,
    SetData,
    Delete,
}

/// Change to a session's owned-ephemeral list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralChange {
    pub owner: SessionId,
    pub path: String,
    pub add: bool,
}

/// One node of a planned update; `base` is the record's stamp when the
/// writer read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeUpdate {
    #[serde(flatten)]
    pub commit: NodeCommit,
    pub base: Option<Txid>,
    /// Node created by this update; its `ctxid` is the update's txid.
    #[serde(default)]
    pub fresh: bool,
}

/// A validated request, before it has a txid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub kind: UpdateKind,
    /// Node the request targets (the generated name for sequential creates).
    pub path: String,
    pub nodes: Vec<NodeUpdate>,
    pub ephemeral: Option<EphemeralChange>,
}

impl Plan {
    pub fn build(
        req: &WriteRequest,
        node: Option<&SystemNodeRecord>,
        parent: Option<&SystemNodeRecord>,
        holders: &std::collections::BTreeMap<String, u64>,
    ) -> Option<Plan> {
        let stamp = |r: Option<&SystemNodeRecord>| r.and_then(SystemNodeRecord::mtxid_stamp);
        let holder = |p: &str| holders.get(p).copied();
        match &req.op {
            WriteOp::Create {
                path,
                data,
                ephemeral,
                sequential,
            } => {
                let p = parent?;
                let actual = if *sequential {
                    sequential_name(path, p.seq_counter)
                } else {
                    path.clone()
                };
                let mut pimg = p.image.clone();
                let name = name_of(&actual).to_string();
                if let Err(pos) = pimg.children.binary_search(&name) {
                    pimg.children.insert(pos, name);
                }
                let owner = ephemeral.then_some(req.id.session);
                Some(Plan {
                    kind: UpdateKind::Create,
                    path: actual.clone(),
                    nodes: vec![
                        NodeUpdate {
                            commit: NodeCommit {
                                path: p.path.clone(),
                                holder_ts: holder(&p.path),
                                image: Some(pimg),
                                seq_counter: sequential.then_some(p.seq_counter + 1),
                            },
                            base: stamp(Some(p)),
                            fresh: false,
                        },
                        NodeUpdate {
                            commit: NodeCommit {
                                path: actual.clone(),
                                holder_ts: holder(&actual),
                                image: Some(NodeImage {
                                    data: data.clone(),
                                    children: vec![],
                                    ctxid: 0,
                                    mtxid: 0,
                                    version: 0,
                                    ephemeral_owner: owner,
                                }),
                                seq_counter: None,
                            },
                            base: stamp(node),
                            fresh: true,
                        },
                    ],
                    ephemeral: owner.map(|o| EphemeralChange {
                        owner: o,
                        path: actual,
                        add: true,
                    }),
                })
            }
            WriteOp::SetData { path, data, .. } => {
                let n = node?;
                let mut img = n.image.clone();
                img.data = data.clone();
                img.version += 1;
                Some(Plan {
                    kind: UpdateKind::SetData,
                    path: path.clone(),
                    nodes: vec![NodeUpdate {
                        commit: NodeCommit {
                            path: path.clone(),
                            holder_ts: holder(path),
                            image: Some(img),
                            seq_counter: None,
                        },
                        base: stamp(node),
                        fresh: false,
                    }],
                    ephemeral: None,
                })
            }
            WriteOp::Delete { path, .. } => {
                let n = node?;
                let p = parent?;
                let mut pimg = p.image.clone();
                pimg.children.retain(|c| c != name_of(path));
                Some(Plan {
                    kind: UpdateKind::Delete,
                    path: path.clone(),
                    nodes: vec![
                        NodeUpdate {
                            commit: NodeCommit {
                                path: p.path.clone(),
                                holder_ts: holder(&p.path),
                                image: Some(pimg),
                                seq_counter: None,
                            },
                            base: stamp(Some(p)),
                            fresh: false,
                        },
                        NodeUpdate {
                            commit: NodeCommit {
                                path: path.clone(),
                                holder_ts: holder(path),
                                image: None,
                                seq_counter: None,
                            },
                            base: stamp(node),
                            fresh: false,
                        },
                    ],
                    ephemeral: n.image.ephemeral_owner.map(|o| EphemeralChange {
                        owner: o,
                        path: path.clone(),
                        add: false,
                    }),
                })
            }
            WriteOp::Deregister => None,
        }
    }

    /// Stamps the txid into every new image.
    pub fn materialize(&self, txid: Txid) -> Vec<NodeUpdate> {
        self.nodes
            .iter()
            .cloned()
            .map(|mut n| {
                if let Some(img) = &mut n.commit.image {
                    img.mtxid = txid;
                    if n.fresh {
                        img.ctxid = txid;
                    }
                }
                n
            })
            .collect()
    }
}

/// Payload of the distributor queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributorUpdate {
    pub request: RequestId,
    pub txid: Txid,
    pub kind: UpdateKind,
    pub path: String,
    pub nodes: Vec<NodeUpdate>,
    #[serde(default)]
    pub ephemeral: Option<EphemeralChange>,
    /// Writer queue (session) that produced the update.
    pub writer: SessionId,
}

impl DistributorUpdate {
    pub fn commits(&self) -> Vec<NodeCommit> {
        self.nodes.iter().map(|n| n.commit.clone()).collect()
    }

    /// Session-side legs of the commit transaction: the processed-request
    /// marker, the ephemeral list and, with sequence-number txids, the
    /// `state` counter.
    pub fn extra_legs(&self, mode: QueueMode) -> Vec<TxOp> {
        let marker = self.request.marker();
        let mut legs = vec![TxOp::new(
            table::SESSIONS,
            &session_key(self.request.session),
            Condition::FieldAbsent(marker.clone()),
            vec![Mutation::Set(marker, DoneMarker::Committed(self.txid).to_value())],
        )];
        if let Some(e) = &self.ephemeral {
            let m = if e.add {
                Mutation::append(field::EPHEMERAL, vec![Value::Str(e.path.clone())])
            } else {
                Mutation::RemoveValue(field::EPHEMERAL.into(), Value::Str(e.path.clone()))
            };
            legs.push(TxOp::new(table::SESSIONS, &session_key(e.owner), Condition::Always, vec![m]));
        }
        if mode == QueueMode::SequenceNumber {
            legs.push(TxOp::new(
                table::COUNTERS,
                STATE_COUNTER,
                Condition::Always,
                vec![Mutation::Max(field::VALUE.into(), self.txid)],
            ));
        }
        legs
    }
}

/// A fired watch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchRecord {
    pub id: WatchId,
    pub path: String,
    pub watch: WatchKind,
    pub event: WatchEvent,
    pub subscribers: Vec<SessionId>,
}

/// Watch registrations an update fires, with the event each one reports.
pub fn triggered(kind: UpdateKind, path: &str) -> Vec<(WatchKind, String, WatchEvent)> {
    let parent = parent_of(path).map(str::to_string);
    let mut out = match kind {
        UpdateKind::Create => vec![(WatchKind::Exists, path.to_string(), WatchEvent::NodeCreated)],
        UpdateKind::SetData => vec![
            (WatchKind::Data, path.to_string(), WatchEvent::DataChanged),
            (WatchKind::Exists, path.to_string(), WatchEvent::DataChanged),
        ],
        UpdateKind::Delete => vec![
            (WatchKind::Data, path.to_string(), WatchEvent::NodeDeleted),
            (WatchKind::Exists, path.to_string(), WatchEvent::NodeDeleted),
            (WatchKind::Children, path.to_string(), WatchEvent::NodeDeleted),
        ],
    };
    if kind != UpdateKind::SetData {
        if let Some(p) = parent {
            out.push((WatchKind::Children, p, WatchEvent::ChildrenChanged));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, children: &[&str], version: u64) -> SystemNodeRecord {
        SystemNodeRecord {
            path: path.into(),
            image: NodeImage {
                children: children.iter().map(|c| c.to_string()).collect(),
                ctxid: 1,
                mtxid: 3,
                version,
                ..Default::default()
            },
            created: true,
            deleted: false,
            lock_ts: None,
            pending: vec![],
            seq_counter: 0,
        }
    }

    fn create(path: &str) -> WriteOp {
        WriteOp::Create {
            path: path.into(),
            data: vec![],
            ephemeral: false,
            sequential: false,
        }
    }

    #[test]
    fn validation_reasons() {
        let root = rec("/", &["a"], 0);
        let a = rec("/a", &[], 2);
        assert_eq!(is_valid(&create("/a"), Some(&a), Some(&root)), Err(FailReason::NodeExists));
        assert_eq!(is_valid(&create("/x/y"), None, None), Err(FailReason::NoParent));
        let set = |v| WriteOp::SetData {
            path: "/a".into(),
            data: vec![],
            version: v,
        };
        assert_eq!(is_valid(&set(Some(2)), Some(&a), None), Ok(()));
        assert_eq!(is_valid(&set(Some(1)), Some(&a), None), Err(FailReason::BadVersion));
        assert_eq!(is_valid(&set(None), None, None), Err(FailReason::NoNode));
        let del = WriteOp::Delete {
            path: "/".into(),
            version: None,
        };
        assert_eq!(is_valid(&del, Some(&root), None), Err(FailReason::BadArguments));
        let del_a = WriteOp::Delete {
            path: "/a".into(),
            version: None,
        };
        let full = rec("/a", &["b"], 0);
        assert_eq!(is_valid(&del_a, Some(&full), Some(&root)), Err(FailReason::NotEmpty));
        let mut eph = rec("/e", &[], 0);
        eph.image.ephemeral_owner = Some(1);
        assert_eq!(is_valid(&create("/e/c"), None, Some(&eph)), Err(FailReason::NoChildrenForEphemerals));
    }

    #[test]
    fn tombstones_and_placeholders_count_as_absent() {
        let root = rec("/", &[], 0);
        let mut tomb = rec("/a", &[], 0);
        tomb.deleted = true;
        assert_eq!(is_valid(&create("/a"), Some(&tomb), Some(&root)), Ok(()));
        let mut placeholder = rec("/a", &[], 0);
        placeholder.created = false;
        assert_eq!(is_valid(&create("/a"), Some(&placeholder), Some(&root)), Ok(()));
    }

    #[test]
    fn sequential_create_plan() {
        let mut q = rec("/q", &[], 0);
        q.seq_counter = 7;
        let req = WriteRequest {
            id: RequestId::new(1, 1),
            op: WriteOp::Create {
                path: "/q/job-".into(),
                data: b"d".to_vec(),
                ephemeral: true,
                sequential: true,
            },
        };
        let holders = [("/q".to_string(), 4u64)].into_iter().collect();
        let plan = Plan::build(&req, None, Some(&q), &holders).unwrap();
        assert_eq!(plan.path, "/q/job-0000000007");
        let nodes = plan.materialize(12);
        assert_eq!(nodes[0].commit.seq_counter, Some(8));
        assert_eq!(nodes[0].commit.image.as_ref().unwrap().children, vec!["job-0000000007"]);
        let img = nodes[1].commit.image.as_ref().unwrap();
        assert_eq!((img.ctxid, img.mtxid, img.ephemeral_owner), (12, 12, Some(1)));
        assert_eq!(nodes[1].commit.holder_ts, None);
        assert_eq!(plan.ephemeral.unwrap().path, "/q/job-0000000007");
    }

    #[test]
    fn trigger_table() {
        let kinds = |k, p| triggered(k, p).into_iter().map(|(w, p, e)| (w, p, e)).collect::<Vec<_>>();
        assert_eq!(
            kinds(UpdateKind::Create, "/a/b"),
            vec![
                (WatchKind::Exists, "/a/b".into(), WatchEvent::NodeCreated),
                (WatchKind::Children, "/a".into(), WatchEvent::ChildrenChanged)
            ]
        );
        assert_eq!(kinds(UpdateKind::SetData, "/a").len(), 2);
        assert_eq!(kinds(UpdateKind::Delete, "/a").len(), 4);
    }
}

//! Typed views over system-store items.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kv::{Item, Mutation, Value};
use crate::model::{NodeImage, SessionId, Txid, WatchId};

pub mod table {
    pub const NODES: &str = "nodes";
    pub const SESSIONS: &str = "sessions";
    pub const COUNTERS: &str = "counters";
    pub const WATCHES: &str = "watches";
    /// Fired watch sets keyed by txid, so distributor retries resend the
    /// same notifications.
    pub const DELIVERIES: &str = "deliveries";

    pub const ALL: [&str; 5] = [NODES, SESSIONS, COUNTERS, WATCHES, DELIVERIES];
}

pub mod field {
    pub const DATA: &str = "data";
    pub const CHILDREN: &str = "children";
    pub const CTXID: &str = "ctxid";
    pub const MTXID: &str = "mtxid";
    pub const VERSION: &str = "version";
    pub const LOCK_TS: &str = "lock_ts";
    pub const PENDING: &str = "pending";
    pub const EPH_OWNER: &str = "ephemeral_owner";
    pub const SEQ: &str = "seq";
    pub const DELETED: &str = "deleted";

    pub const STATUS: &str = "status";
    pub const EPHEMERAL: &str = "ephemeral";
    pub const WATCHES: &str = "watches";
    pub const LAST_HB: &str = "last_heartbeat";
    pub const REGION: &str = "region";

    pub const VALUE: &str = "value";
    pub const ID: &str = "id";
    pub const SUBSCRIBERS: &str = "subscribers";
    pub const ENTRIES: &str = "entries";
}

pub const STATE_COUNTER: &str = "state";
pub const WATCH_ID_COUNTER: &str = "watch_ids";

pub fn epoch_key(region: &str) -> String {
    format!("epoch:{region}")
}

pub fn session_key(id: SessionId) -> String {
    id.to_string()
}

pub fn watch_key(kind: crate::model::WatchKind, path: &str) -> String {
    format!("{}:{}", kind.as_str(), path)
}

fn int(item: &Item, f: &str) -> Option<u64> {
    item.get(f).and_then(Value::as_int)
}

fn int_list(item: &Item, f: &str) -> Vec<u64> {
    item.get(f)
        .and_then(Value::as_list)
        .map(|l| l.iter().filter_map(Value::as_int).collect())
        .unwrap_or_default()
}

fn str_list(item: &Item, f: &str) -> Vec<String> {
    item.get(f)
        .and_then(Value::as_list)
        .map(|l| l.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

/// Authoritative node state. A record may exist only as a lock placeholder
/// (never created) or as a tombstone (deleted, distribution pending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemNodeRecord {
    pub path: String,
    pub image: NodeImage,
    pub created: bool,
    pub deleted: bool,
    pub lock_ts: Option<u64>,
    pub pending: Vec<Txid>,
    pub seq_counter: u64,
}

impl SystemNodeRecord {
    pub fn from_item(path: &str, item: &Item) -> Self {
        SystemNodeRecord {
            path: path.to_string(),
            image: NodeImage {
                data: item
                    .get(field::DATA)
                    .and_then(Value::as_bytes)
                    .map(<[u8]>::to_vec)
                    .unwrap_or_default(),
                children: str_list(item, field::CHILDREN),
                ctxid: int(item, field::CTXID).unwrap_or(0),
                mtxid: int(item, field::MTXID).unwrap_or(0),
                version: int(item, field::VERSION).unwrap_or(0),
                ephemeral_owner: int(item, field::EPH_OWNER).map(|v| v as SessionId),
            },
            created: item.contains_key(field::CTXID),
            deleted: int(item, field::DELETED) == Some(1),
            lock_ts: int(item, field::LOCK_TS),
            pending: int_list(item, field::PENDING),
            seq_counter: int(item, field::SEQ).unwrap_or(0),
        }
    }

    pub fn exists(&self) -> bool {
        self.created && !self.deleted
    }

    /// Stamp used by the distributor to decide whether the node moved on
    /// since a writer read it.
    pub fn mtxid_stamp(&self) -> Option<Txid> {
        self.created.then_some(self.image.mtxid)
    }
}

/// Mutations writing a full node image into a record.
pub fn image_mutations(image: &NodeImage) -> Vec<Mutation> {
    let mut m = vec![
        Mutation::set(field::DATA, Value::Bytes(image.data.clone())),
        Mutation::set(
            field::CHILDREN,
            Value::List(image.children.iter().map(|c| Value::Str(c.clone())).collect()),
        ),
        Mutation::set(field::CTXID, image.ctxid),
        Mutation::set(field::MTXID, image.mtxid),
        Mutation::set(field::VERSION, image.version),
        Mutation::remove(field::DELETED),
    ];
    match image.ephemeral_owner {
        Some(o) => m.push(Mutation::set(field::EPH_OWNER, o as u64)),
        None => m.push(Mutation::remove(field::EPH_OWNER)),
    }
    m
}

/// Mutations turning a record into a tombstone stamped with `txid`.
pub fn tombstone_mutations(txid: Txid) -> Vec<Mutation> {
    vec![
        Mutation::set(field::DELETED, 1),
        Mutation::set(field::MTXID, txid),
        Mutation::remove(field::DATA),
        Mutation::remove(field::CHILDREN),
        Mutation::remove(field::EPH_OWNER),
        Mutation::remove(field::VERSION),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Evicting,
    Closed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Active => "active",
            SessionStatus::Evicting => "evicting",
            SessionStatus::Closed => "closed",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "evicting" => SessionStatus::Evicting,
            "closed" => SessionStatus::Closed,
            _ => SessionStatus::Active,
        }
    }
}

/// Outcome recorded for a processed request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DoneMarker {
    Committed(Txid),
    Failed(String),
}

impl DoneMarker {
    pub fn to_value(&self) -> Value {
        match self {
            DoneMarker::Committed(t) => Value::Int(*t),
            DoneMarker::Failed(r) => Value::Str(format!("fail:{r}")),
        }
    }

    pub fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Int(t) => Some(DoneMarker::Committed(*t)),
            Value::Str(s) => s.strip_prefix("fail:").map(|r| DoneMarker::Failed(r.to_string())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub id: SessionId,
    pub status: SessionStatus,
    pub region: String,
    pub ephemeral: Vec<String>,
    pub watches: Vec<WatchId>,
    pub last_heartbeat: u64,
    pub done: BTreeMap<String, DoneMarker>,
}

impl SessionRecord {
    pub fn from_item(id: SessionId, item: &Item) -> Self {
        SessionRecord {
            id,
            status: item
                .get(field::STATUS)
                .and_then(Value::as_str)
                .map(SessionStatus::parse)
                .unwrap_or(SessionStatus::Active),
            region: item
                .get(field::REGION)
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            ephemeral: str_list(item, field::EPHEMERAL),
            watches: int_list(item, field::WATCHES),
            last_heartbeat: int(item, field::LAST_HB).unwrap_or(0),
            done: item
                .iter()
                .filter(|(k, _)| k.starts_with("done:"))
                .filter_map(|(k, v)| DoneMarker::from_value(v).map(|m| (k.clone(), m)))
                .collect(),
        }
    }
}

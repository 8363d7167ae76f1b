//! Identifiers, node images and path helpers shared by every layer.

use std::fmt;

use serde::{Deserialize, Serialize};

pub type SessionId = u32;
pub type Txid = u64;
pub type WatchId = u64;

/// Identifies a client request. `sub` distinguishes the per-node deletions a
/// session deregistration expands into.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId {
    pub session: SessionId,
    pub seq: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<String>,
}

impl RequestId {
    pub fn new(session: SessionId, seq: u32) -> Self {
        RequestId {
            session,
            seq,
            sub: None,
        }
    }

    pub fn with_sub(&self, sub: &str) -> Self {
        RequestId {
            sub: Some(sub.to_string()),
            ..self.clone()
        }
    }

    /// Attribute name of the processed-request marker in the session record.
    pub fn marker(&self) -> String {
        match &self.sub {
            None => format!("done:{}", self.seq),
            Some(s) => format!("done:{}:{}", self.seq, s),
        }
    }

    pub fn is_internal(&self) -> bool {
        self.sub.is_some()
    }

    /// Requests nobody waits on: sub-deletes and heartbeat evictions.
    pub fn is_silent(&self) -> bool {
        self.sub.is_some() || self.seq == 0
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sub {
            None => write!(f, "{}#{}", self.session, self.seq),
            Some(s) => write!(f, "{}#{}:{}", self.session, self.seq, s),
        }
    }
}

/// Client-visible content of a node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeImage {
    #[serde(with = "crate::b64")]
    pub data: Vec<u8>,
    pub children: Vec<String>,
    pub ctxid: Txid,
    pub mtxid: Txid,
    /// Data version, bumped by every `set_data`.
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ephemeral_owner: Option<SessionId>,
}

/// Registration kind: which read installed the watch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WatchKind {
    Data,
    Exists,
    Children,
}

impl WatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WatchKind::Data => "data",
            WatchKind::Exists => "exists",
            WatchKind::Children => "children",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "data" => Some(WatchKind::Data),
            "exists" => Some(WatchKind::Exists),
            "children" => Some(WatchKind::Children),
            _ => None,
        }
    }
}

/// Event carried by a watch notification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WatchEvent {
    DataChanged,
    ChildrenChanged,
    NodeCreated,
    NodeDeleted,
}

impl WatchEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            WatchEvent::DataChanged => "data-changed",
            WatchEvent::ChildrenChanged => "children-changed",
            WatchEvent::NodeCreated => "node-created",
            WatchEvent::NodeDeleted => "node-deleted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "data-changed" => Some(WatchEvent::DataChanged),
            "children-changed" => Some(WatchEvent::ChildrenChanged),
            "node-created" => Some(WatchEvent::NodeCreated),
            "node-deleted" => Some(WatchEvent::NodeDeleted),
            _ => None,
        }
    }
}

/// Application-visible result of one client operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Success {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        txid: Option<Txid>,
        /// Actual path of a created node.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    Failure {
        reason: String,
    },
    /// The request may or may not have taken effect.
    Indeterminate {
        reason: String,
    },
    Data {
        #[serde(with = "crate::b64")]
        data: Vec<u8>,
        mtxid: Txid,
        version: u64,
    },
    Children {
        children: Vec<String>,
        mtxid: Txid,
    },
    Exists {
        exists: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mtxid: Option<Txid>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<u64>,
    },
    NoNode,
}

impl Outcome {
    pub fn failure(reason: impl Into<String>) -> Self {
        Outcome::Failure { reason: reason.into() }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success { .. })
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::Failure { .. })
    }

    pub fn success_txid(&self) -> Option<Txid> {
        match self {
            Outcome::Success { txid, .. } => *txid,
            _ => None,
        }
    }
}

pub const ROOT: &str = "/";

/// Absolute, `/`-separated, no empty segments, no trailing slash except root.
pub fn is_valid_path(path: &str) -> bool {
    if path == ROOT {
        return true;
    }
    path.starts_with('/') && !path.ends_with('/') && path[1..].split('/').all(|s| !s.is_empty())
}

pub fn parent_of(path: &str) -> Option<&str> {
    if path == ROOT {
        return None;
    }
    match path.rfind('/') {
        Some(0) => Some(ROOT),
        Some(i) => Some(&path[..i]),
        None => None,
    }
}

pub fn name_of(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or("")
}

pub fn join(parent: &str, name: &str) -> String {
    if parent == ROOT {
        format!("/{name}")
    } else {
        format!("{parent}/{name}")
    }
}

/// Name of a sequential child: requested name plus a 10-digit counter.
pub fn sequential_name(path: &str, counter: u64) -> String {
    format!("{path}{counter:010}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths() {
        assert!(is_valid_path("/"));
        assert!(is_valid_path("/a/b"));
        assert!(!is_valid_path("/a/"));
        assert!(!is_valid_path("a"));
        assert!(!is_valid_path("/a//b"));
        assert_eq!(parent_of("/a"), Some("/"));
        assert_eq!(parent_of("/a/b"), Some("/a"));
        assert_eq!(parent_of("/"), None);
        assert_eq!(name_of("/a/b"), "b");
        assert_eq!(join("/", "a"), "/a");
        assert_eq!(join("/a", "b"), "/a/b");
        assert_eq!(sequential_name("/q/job-", 7), "/q/job-0000000007");
    }

    #[test]
    fn markers() {
        let r = RequestId::new(3, 9);
        assert_eq!(r.marker(), "done:9");
        assert_eq!(r.with_sub("/e").marker(), "done:9:/e");
    }
}

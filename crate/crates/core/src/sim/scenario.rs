//! Scenario files: cluster shape, timing knobs, fault schedule and workload.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::fault::FaultSpec;
use crate::error::{Error, Result};
use crate::model::{is_valid_path, SessionId};
use crate::queue::QueueMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub id: SessionId,
    pub region: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Create,
    SetData,
    Delete,
    GetData,
    GetChildren,
    Exists,
    /// Client-initiated session close; deletes the session's ephemeral nodes.
    Close,
    /// The client stops responding: no pongs, no acks, results dropped.
    Disconnect,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Create => "create",
            OpKind::SetData => "set_data",
            OpKind::Delete => "delete",
            OpKind::GetData => "get_data",
            OpKind::GetChildren => "get_children",
            OpKind::Exists => "exists",
            OpKind::Close => "close",
            OpKind::Disconnect => "disconnect",
        }
    }

    pub fn is_read(self) -> bool {
        matches!(self, OpKind::GetData | OpKind::GetChildren | OpKind::Exists)
    }

    pub fn is_write(self) -> bool {
        matches!(self, OpKind::Create | OpKind::SetData | OpKind::Delete | OpKind::Close)
    }

    fn needs_path(self) -> bool {
        !matches!(self, OpKind::Close | OpKind::Disconnect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadOp {
    pub session: SessionId,
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub path: String,
    /// Base64 payload for create and set_data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// `ephemeral` and/or `sequential` on create.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Leave a watch with the read.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub watch: bool,
    /// Expected data version for set_data and delete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    /// Submission tick; ops of a session are submitted in list order.
    #[serde(default)]
    pub at: u64,
}

impl WorkloadOp {
    pub fn new(session: SessionId, op: OpKind, path: &str) -> Self {
        WorkloadOp {
            session,
            op,
            path: path.to_string(),
            data: None,
            flags: vec![],
            watch: false,
            version: None,
            at: 0,
        }
    }

    pub fn data(mut self, bytes: &[u8]) -> Self {
        self.data = Some(crate::b64::encode(bytes));
        self
    }

    pub fn flag(mut self, f: &str) -> Self {
        self.flags.push(f.to_string());
        self
    }

    pub fn watch(mut self) -> Self {
        self.watch = true;
        self
    }

    pub fn version(mut self, v: u64) -> Self {
        self.version = Some(v);
        self
    }

    pub fn at(mut self, t: u64) -> Self {
        self.at = t;
        self
    }

    pub fn has_flag(&self, f: &str) -> bool {
        self.flags.iter().any(|x| x == f)
    }

    pub fn data_bytes(&self) -> Vec<u8> {
        self.data
            .as_deref()
            .and_then(|d| crate::b64::decode(d).ok())
            .unwrap_or_default()
    }
}

/// Per-action latencies in ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Latencies {
    /// One step of a function (a storage operation).
    pub step: u64,
    /// Enqueue to dispatch.
    pub queue: u64,
    /// Function to client and client to function messages.
    pub wire: u64,
    /// Extra delay before each distributor dispatch.
    pub distributor: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            step: 1,
            queue: 1,
            wire: 1,
            distributor: 0,
        }
    }
}

fn default_regions() -> Vec<String> {
    vec!["home".to_string()]
}
fn default_batch_max() -> usize {
    10
}
fn default_lock_max_hold() -> u64 {
    100
}
fn default_heartbeat_period() -> u64 {
    50
}
fn default_retry_delay() -> u64 {
    2
}
fn default_max_events() -> u64 {
    1_000_000
}
fn default_ack_timeout() -> u64 {
    5
}
fn default_ping_timeout() -> u64 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_regions")]
    pub regions: Vec<String>,
    pub sessions: Vec<SessionSpec>,
    #[serde(default)]
    pub queue_mode: QueueMode,
    #[serde(default = "default_batch_max")]
    pub batch_max: usize,
    #[serde(default = "default_lock_max_hold")]
    pub lock_max_hold_ticks: u64,
    #[serde(default = "default_heartbeat_period")]
    pub heartbeat_period_ticks: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub workload: Vec<WorkloadOp>,
    #[serde(default)]
    pub latencies: Latencies,
    /// Random extra delay of up to this many ticks on each dispatch.
    #[serde(default)]
    pub jitter_ticks: u64,
    /// Delay before a failed batch is delivered again.
    #[serde(default = "default_retry_delay")]
    pub retry_delay_ticks: u64,
    /// Deliveries allowed per batch before it is dead-lettered; unlimited
    /// when absent.
    #[serde(default)]
    pub retry_cap: Option<u32>,
    /// Let queues deliver successfully processed batches a second time.
    #[serde(default)]
    pub duplicate_delivery: bool,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default = "default_ack_timeout")]
    pub ack_timeout_ticks: u64,
    #[serde(default = "default_ping_timeout")]
    pub ping_timeout_ticks: u64,
    /// Bound on how long the client holds back a result; defaults to ten
    /// heartbeat periods.
    #[serde(default)]
    pub stall_timeout_ticks: Option<u64>,
}

impl ScenarioConfig {
    pub fn new(seed: u64, sessions: &[(SessionId, &str)]) -> Self {
        let mut regions: Vec<String> = vec![];
        for (_, r) in sessions {
            if !regions.iter().any(|x| x == r) {
                regions.push(r.to_string());
            }
        }
        if regions.is_empty() {
            regions = default_regions();
        }
        ScenarioConfig {
            seed,
            regions,
            sessions: sessions
                .iter()
                .map(|(id, r)| SessionSpec {
                    id: *id,
                    region: r.to_string(),
                })
                .collect(),
            queue_mode: QueueMode::default(),
            batch_max: default_batch_max(),
            lock_max_hold_ticks: default_lock_max_hold(),
            heartbeat_period_ticks: default_heartbeat_period(),
            faults: vec![],
            workload: vec![],
            latencies: Latencies::default(),
            jitter_ticks: 0,
            retry_delay_ticks: default_retry_delay(),
            retry_cap: None,
            duplicate_delivery: false,
            max_events: default_max_events(),
            ack_timeout_ticks: default_ack_timeout(),
            ping_timeout_ticks: default_ping_timeout(),
            stall_timeout_ticks: None,
        }
    }

    pub fn stall_timeout(&self) -> u64 {
        self.stall_timeout_ticks
            .unwrap_or(10 * self.heartbeat_period_ticks)
    }

    pub fn region_of(&self, s: SessionId) -> Option<&str> {
        self.sessions
            .iter()
            .find(|x| x.id == s)
            .map(|x| x.region.as_str())
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::scenario(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::scenario("regions", "at least one region is required"));
        }
        let mut seen_regions = BTreeSet::new();
        for (i, r) in self.regions.iter().enumerate() {
            if !seen_regions.insert(r) {
                return Err(Error::scenario(format!("regions[{i}]"), format!("duplicate region `{r}`")));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.sessions.iter().enumerate() {
            if !ids.insert(s.id) {
                return Err(Error::scenario(format!("sessions[{i}].id"), format!("duplicate session {}", s.id)));
            }
            if !self.regions.contains(&s.region) {
                return Err(Error::scenario(
                    format!("sessions[{i}].region"),
                    format!("undeclared region `{}`", s.region),
                ));
            }
        }
        if self.batch_max == 0 {
            return Err(Error::scenario("batch_max", "must be positive"));
        }
        if self.lock_max_hold_ticks == 0 {
            return Err(Error::scenario("lock_max_hold_ticks", "must be positive"));
        }
        if self.heartbeat_period_ticks == 0 {
            return Err(Error::scenario("heartbeat_period_ticks", "must be positive"));
        }
        if self.latencies.step == 0 || self.latencies.wire == 0 {
            return Err(Error::scenario("latencies", "step and wire latencies must be positive"));
        }
        for (i, f) in self.faults.iter().enumerate() {
            f.validate(self.queue_mode)
                .map_err(|r| Error::scenario(format!("faults[{i}].point"), r))?;
        }
        for (i, op) in self.workload.iter().enumerate() {
            if !ids.contains(&op.session) {
                return Err(Error::scenario(
                    format!("workload[{i}].session"),
                    format!("undeclared session {}", op.session),
                ));
            }
            if op.op.needs_path() && !is_valid_path(&op.path) {
                return Err(Error::scenario(format!("workload[{i}].path"), format!("invalid path `{}`", op.path)));
            }
            if let Some(d) = &op.data {
                if crate::b64::decode(d).is_err() {
                    return Err(Error::scenario(format!("workload[{i}].data"), "not valid base64"));
                }
            }
            for (j, f) in op.flags.iter().enumerate() {
                if f != "ephemeral" && f != "sequential" {
                    return Err(Error::scenario(format!("workload[{i}].flags[{j}]"), format!("unknown flag `{f}`")));
                }
                if op.op != OpKind::Create {
                    return Err(Error::scenario(format!("workload[{i}].flags[{j}]"), "flags apply to create only"));
                }
            }
            if op.watch && !op.op.is_read() {
                return Err(Error::scenario(format!("workload[{i}].watch"), "watches are set by reads"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 7,
        "regions": ["us", "eu"],
        "sessions": [{"id": 1, "region": "us"}],
        "workload": [{"session": 1, "op": "create", "path": "/a", "data": "aGk="}]
    }"#;

    #[test]
    fn defaults_apply() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.batch_max, 10);
        assert_eq!(c.lock_max_hold_ticks, 100);
        assert_eq!(c.queue_mode, QueueMode::AtomicPush);
        assert_eq!(c.stall_timeout(), 500);
        assert_eq!(c.workload[0].data_bytes(), b"hi");
        let again = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad_session = MINIMAL.replace(r#""session": 1"#, r#""session": 9"#);
        match ScenarioConfig::from_json(&bad_session) {
            Err(Error::Scenario { path, .. }) => assert_eq!(path, "workload[0].session"),
            other => panic!("{other:?}"),
        }
        let bad_type = MINIMAL.replace(r#""seed": 7"#, r#""seed": "x""#);
        match ScenarioConfig::from_json(&bad_type) {
            Err(Error::Scenario { path, .. }) => assert_eq!(path, "seed"),
            other => panic!("{other:?}"),
        }
        let bad_region = MINIMAL.replace(r#""region": "us""#, r#""region": "ap""#);
        match ScenarioConfig::from_json(&bad_region) {
            Err(Error::Scenario { path, .. }) => assert_eq!(path, "sessions[0].region"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fault_points_are_checked_against_queue_mode() {
        let text = MINIMAL.replace(
            r#""workload""#,
            r#""faults": [{"target": "writer", "point": "between-push-and-commit", "occurrence": 1}], "workload""#,
        );
        match ScenarioConfig::from_json(&text) {
            Err(Error::Scenario { path, .. }) => assert_eq!(path, "faults[0].point"),
            other => panic!("{other:?}"),
        }
        let seq = text.replace(r#""seed": 7"#, r#""seed": 7, "queue_mode": "sequence-number""#);
        assert!(ScenarioConfig::from_json(&seq).is_ok());
    }
}

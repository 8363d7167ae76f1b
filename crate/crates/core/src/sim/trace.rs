//! Totally ordered record of a run, serialized as JSON lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::model::{SessionId, Txid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Enqueue,
    InvokeStart,
    InvokeCrash,
    InvokeComplete,
    StorageRead,
    StorageWrite,
    Commit,
    NotifySent,
    NotifyReceived,
    ClientReadObserve,
    ClientResult,
    SessionEvicted,
    SessionOpen,
    SessionClose,
    ClientSubmit,
    /// Notification arriving at the client library, before dedup and ordering.
    NotifyWire,
    WatchFired,
    DistributorPush,
    DeadLetter,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: u64,
    pub kind: TraceKind,
    pub session: Option<SessionId>,
    pub txid: Option<Txid>,
    pub path: Option<String>,
    pub payload: Json,
}

impl TraceEvent {
    pub fn new(time: u64, kind: TraceKind) -> Self {
        TraceEvent {
            time,
            kind,
            session: None,
            txid: None,
            path: None,
            payload: Json::Null,
        }
    }

    pub fn session(mut self, s: SessionId) -> Self {
        self.session = Some(s);
        self
    }

    pub fn txid(mut self, t: Txid) -> Self {
        self.txid = Some(t);
        self
    }

    pub fn path(mut self, p: impl Into<String>) -> Self {
        self.path = Some(p.into());
        self
    }

    pub fn payload(mut self, p: Json) -> Self {
        self.payload = p;
        self
    }

    pub fn field(&self, name: &str) -> Option<&Json> {
        self.payload.get(name)
    }

    pub fn str_field(&self, name: &str) -> Option<&str> {
        self.field(name).and_then(Json::as_str)
    }

    pub fn u64_field(&self, name: &str) -> Option<u64> {
        self.field(name).and_then(Json::as_u64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, e: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|l| l.time <= e.time));
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = (usize, &TraceEvent)> {
        self.events.iter().enumerate().filter(move |(_, e)| e.kind == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|err| Error::Trace {
                line: i + 1,
                reason: err.to_string(),
            })?;
            events.push(e);
        }
        Ok(Trace { events })
    }

    pub fn from_jsonl(s: &str) -> Result<Trace> {
        Self::read_jsonl(s.as_bytes())
    }
}

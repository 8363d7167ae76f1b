//! Single-threaded reference interpreter of the coordination API, and a
//! search for a cross-session interleaving that explains a run.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::history::History;
use crate::error::{Error, Result};
use crate::model::{NodeImage, Outcome, SessionId, Txid, ROOT};
use crate::sim::scenario::{OpKind, ScenarioConfig, WorkloadOp};
use crate::sim::trace::Trace;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Node {
    data: Vec<u8>,
    children: BTreeSet<String>,
    ctxid: Txid,
    mtxid: Txid,
    version: u64,
    owner: Option<SessionId>,
    seq: u64,
}

/// In-memory tree with the client API's sequential semantics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Model {
    nodes: BTreeMap<String, Node>,
    txid: Txid,
}

impl Default for Model {
    fn default() -> Self {
        let root = Node {
            data: vec![],
            children: BTreeSet::new(),
            ctxid: 0,
            mtxid: 0,
            version: 0,
            owner: None,
            seq: 0,
        };
        Model {
            nodes: BTreeMap::from([(ROOT.to_string(), root)]),
            txid: 0,
        }
    }
}

fn parent(path: &str) -> Option<String> {
    if path == ROOT {
        return None;
    }
    match path.rfind('/') {
        Some(0) => Some(ROOT.to_string()),
        Some(i) => Some(path[..i].to_string()),
        None => None,
    }
}

fn leaf(path: &str) -> String {
    path.rsplit('/').next().unwrap_or_default().to_string()
}

fn fail(reason: &str) -> Outcome {
    Outcome::failure(reason)
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one operation of `session` and returns what the client sees.
    pub fn apply(&mut self, session: SessionId, op: &WorkloadOp) -> Outcome {
        let path = op.path.as_str();
        match op.op {
            OpKind::Create => {
                if path == ROOT || (!op.has_flag("sequential") && self.nodes.contains_key(path)) {
                    return fail("node-exists");
                }
                let Some(pp) = parent(path) else {
                    return fail("node-exists");
                };
                let Some(p) = self.nodes.get(&pp) else {
                    return fail("no-parent");
                };
                if p.owner.is_some() {
                    return fail("no-children-for-ephemerals");
                }
                let actual = if op.has_flag("sequential") {
                    format!("{path}{:010}", p.seq)
                } else {
                    path.to_string()
                };
                if self.nodes.contains_key(&actual) {
                    return fail("node-exists");
                }
                self.txid += 1;
                let t = self.txid;
                let p = self.nodes.get_mut(&pp).expect("parent");
                p.children.insert(leaf(&actual));
                p.mtxid = t;
                if op.has_flag("sequential") {
                    p.seq += 1;
                }
                self.nodes.insert(
                    actual.clone(),
                    Node {
                        data: op.data_bytes(),
                        children: BTreeSet::new(),
                        ctxid: t,
                        mtxid: t,
                        version: 0,
                        owner: op.has_flag("ephemeral").then_some(session),
                        seq: 0,
                    },
                );
                Outcome::Success {
                    txid: Some(t),
                    path: Some(actual),
                }
            }
            OpKind::SetData => {
                let Some(n) = self.nodes.get(path) else {
                    return fail("no-node");
                };
                if op.version.is_some_and(|v| v != n.version) {
                    return fail("bad-version");
                }
                self.txid += 1;
                let t = self.txid;
                let n = self.nodes.get_mut(path).expect("node");
                n.data = op.data_bytes();
                n.version += 1;
                n.mtxid = t;
                Outcome::Success {
                    txid: Some(t),
                    path: Some(path.to_string()),
                }
            }
            OpKind::Delete => {
                if path == ROOT {
                    return fail("bad-arguments");
                }
                let Some(n) = self.nodes.get(path) else {
                    return fail("no-node");
                };
                if op.version.is_some_and(|v| v != n.version) {
                    return fail("bad-version");
                }
                if !n.children.is_empty() {
                    return fail("not-empty");
                }
                self.txid += 1;
                let t = self.txid;
                self.nodes.remove(path);
                if let Some(p) = parent(path).and_then(|pp| self.nodes.get_mut(&pp)) {
                    p.children.remove(&leaf(path));
                    p.mtxid = t;
                }
                Outcome::Success {
                    txid: Some(t),
                    path: Some(path.to_string()),
                }
            }
            OpKind::GetData => match self.nodes.get(path) {
                None => Outcome::NoNode,
                Some(n) => Outcome::Data {
                    data: n.data.clone(),
                    mtxid: n.mtxid,
                    version: n.version,
                },
            },
            OpKind::GetChildren => match self.nodes.get(path) {
                None => Outcome::NoNode,
                Some(n) => Outcome::Children {
                    children: n.children.iter().cloned().collect(),
                    mtxid: n.mtxid,
                },
            },
            OpKind::Exists => match self.nodes.get(path) {
                None => Outcome::Exists {
                    exists: false,
                    mtxid: None,
                    version: None,
                },
                Some(n) => Outcome::Exists {
                    exists: true,
                    mtxid: Some(n.mtxid),
                    version: Some(n.version),
                },
            },
            OpKind::Close | OpKind::Disconnect => Outcome::Success { txid: None, path: None },
        }
    }

    pub fn tree(&self) -> BTreeMap<String, NodeImage> {
        self.nodes
            .iter()
            .map(|(p, n)| {
                (
                    p.clone(),
                    NodeImage {
                        data: n.data.clone(),
                        children: n.children.iter().cloned().collect(),
                        ctxid: n.ctxid,
                        mtxid: n.mtxid,
                        version: n.version,
                        ephemeral_owner: n.owner,
                    },
                )
            })
            .collect()
    }
}

/// Per-session program and the results the run produced for it.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub session: SessionId,
    pub ops: Vec<WorkloadOp>,
    pub results: Vec<Outcome>,
}

/// Looks for an order of all operations, preserving each session's order,
/// under which the model reproduces every result and the final tree.
/// Returns the order as (session index, op index) pairs.
pub fn find_interleaving(runs: &[SessionRun], final_tree: &BTreeMap<String, NodeImage>) -> Option<Vec<(usize, usize)>> {
    let mut seen = HashSet::new();
    let mut path = vec![];
    let pos = vec![0; runs.len()];
    if dfs(runs, final_tree, Model::new(), pos, &mut seen, &mut path) {
        Some(path)
    } else {
        None
    }
}

fn dfs(
    runs: &[SessionRun],
    final_tree: &BTreeMap<String, NodeImage>,
    model: Model,
    pos: Vec<usize>,
    seen: &mut HashSet<(Vec<usize>, Model)>,
    path: &mut Vec<(usize, usize)>,
) -> bool {
    if pos.iter().zip(runs).all(|(p, r)| *p == r.ops.len()) {
        return model.tree() == *final_tree;
    }
    if !seen.insert((pos.clone(), model.clone())) {
        return false;
    }
    for (i, r) in runs.iter().enumerate() {
        let k = pos[i];
        if k == r.ops.len() {
            continue;
        }
        let mut m = model.clone();
        if m.apply(r.session, &r.ops[k]) != r.results[k] {
            continue;
        }
        let mut next = pos.clone();
        next[i] += 1;
        path.push((i, k));
        if dfs(runs, final_tree, m, next, seen, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Pairs each session's workload with the outcomes the trace reports for
/// it, and extracts the final system tree.
pub fn runs_from_trace(cfg: &ScenarioConfig, trace: &Trace) -> Result<(Vec<SessionRun>, BTreeMap<String, NodeImage>)> {
    let h = History::from_trace(trace)?;
    let mut outcomes: BTreeMap<(SessionId, u32), Outcome> = BTreeMap::new();
    for r in &h.results {
        outcomes.insert((r.session, r.seq), r.outcome.clone());
    }
    for o in &h.observes {
        outcomes.insert((o.session, o.seq), o.outcome.clone());
    }
    let mut runs = vec![];
    for spec in &cfg.sessions {
        let ops: Vec<WorkloadOp> = cfg.workload.iter().filter(|o| o.session == spec.id).cloned().collect();
        let mut results = vec![];
        for (i, op) in ops.iter().enumerate() {
            let seq = i as u32 + 1;
            let out = outcomes.remove(&(spec.id, seq)).ok_or_else(|| Error::Trace {
                line: trace.len(),
                reason: format!("no outcome for session {} op {seq} ({})", spec.id, op.op.as_str()),
            })?;
            results.push(out);
        }
        runs.push(SessionRun {
            session: spec.id,
            ops,
            results,
        });
    }
    let tree = h.final_state.map(|(_, st)| st.system).unwrap_or_default();
    Ok((runs, tree))
}

/// Explains a fault-free run by the sequential model. Close and disconnect
/// are not modelled, so workloads must avoid them.
pub fn explain_run(cfg: &ScenarioConfig, trace: &Trace) -> Result<Option<Vec<(usize, usize)>>> {
    let (runs, tree) = runs_from_trace(cfg, trace)?;
    Ok(find_interleaving(&runs, &tree))
}

//! Trace checker for the four client-visible guarantees (atomic writes,
//! linearized per-session writes, single system image, ordered
//! notifications), epoch balance, and a sequential reference model.

pub mod history;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::Result;
use crate::model::{NodeImage, SessionId, Txid};
use crate::sim::trace::Trace;
use history::{AppRef, History};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Trace indices of the events involved.
    pub events: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub violations: Vec<Violation>,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        CheckResult {
            name,
            violations: vec![],
        }
    }

    fn fail(&mut self, events: Vec<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            events,
            message: message.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.violations.first() {
            None => write!(f, "{:<24} PASS", self.name),
            Some(v) => write!(
                f,
                "{:<24} FAIL  {} violation(s); first at events {:?}: {}",
                self.name,
                self.violations.len(),
                v.events,
                v.message
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

pub const Z1: &str = "Z1 atomicity";
pub const Z2: &str = "Z2 linearized-writes";
pub const Z3: &str = "Z3 single-system-image";
pub const Z4: &str = "Z4 ordered-notifications";
pub const EPOCH: &str = "epoch-balance";

/// Runs every pass over a complete trace.
pub fn check_trace(trace: &Trace) -> Result<Report> {
    let h = History::from_trace(trace)?;
    Ok(Report {
        results: vec![
            check_atomicity(&h),
            check_linearized_writes(&h),
            check_single_system_image(&h),
            check_ordered_notifications(&h),
            check_epoch_balance(&h),
        ],
    })
}

fn request_of(s: SessionId, seq: u32) -> String {
    format!("{s}#{seq}")
}

fn root_tree() -> BTreeMap<String, NodeImage> {
    BTreeMap::from([(crate::model::ROOT.to_string(), NodeImage::default())])
}

/// Tree obtained by applying every commit in txid order.
fn replay(h: &History) -> BTreeMap<String, NodeImage> {
    let mut commits: Vec<_> = h.commits.iter().collect();
    commits.sort_by_key(|c| c.txid);
    let mut tree = root_tree();
    for c in commits {
        for n in &c.nodes {
            match &n.commit.image {
                Some(img) => {
                    tree.insert(n.commit.path.clone(), img.clone());
                }
                None => {
                    tree.remove(&n.commit.path);
                }
            }
        }
    }
    tree
}

fn tree_diff(a: &BTreeMap<String, NodeImage>, b: &BTreeMap<String, NodeImage>) -> Option<String> {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for k in keys {
        match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) if x == y => {}
            (x, y) => return Some(format!("{k}: expected {x:?}, found {y:?}")),
        }
    }
    None
}

/// Accepted writes are fully visible everywhere, rejected ones left nothing
/// behind, and no transaction is applied twice or left half-distributed.
pub fn check_atomicity(h: &History) -> CheckResult {
    let mut r = CheckResult::new(Z1);
    let mut by_txid: BTreeMap<Txid, usize> = BTreeMap::new();
    let mut by_request: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &h.commits {
        if let Some(prev) = by_txid.insert(c.txid, c.idx) {
            r.fail(vec![prev, c.idx], format!("txid {} committed twice", c.txid));
        }
        if let Some(prev) = by_request.insert(c.request.as_str(), c.idx) {
            r.fail(vec![prev, c.idx], format!("request {} committed twice", c.request));
        }
    }
    for res in &h.results {
        let req = request_of(res.session, res.seq);
        let commit = by_request.get(req.as_str()).map(|&i| h.commits.iter().find(|c| c.idx == i).expect("indexed"));
        if let Some(t) = res.outcome.success_txid() {
            match commit {
                Some(c) if c.txid == t => {}
                Some(c) => r.fail(vec![c.idx, res.idx], format!("{req} reported txid {t} but committed {}", c.txid)),
                None => r.fail(vec![res.idx], format!("{req} reported success with txid {t} but never committed")),
            }
        } else if res.outcome.is_failure() {
            if let Some(c) = commit {
                r.fail(
                    vec![c.idx, res.idx],
                    format!("{req} reported failure but committed txid {}", c.txid),
                );
            }
        }
    }
    let Some((snap_idx, st)) = &h.final_state else {
        r.fail(vec![], "trace has no final snapshot");
        return r;
    };
    let expected = replay(h);
    if let Some(d) = tree_diff(&expected, &st.system) {
        r.fail(vec![*snap_idx], format!("system store differs from committed history: {d}"));
    }
    for (region, tree) in &st.regions {
        if let Some(d) = tree_diff(&expected, tree) {
            r.fail(vec![*snap_idx], format!("region {region} differs from committed history: {d}"));
        }
    }
    for (path, pending) in &st.pending {
        r.fail(vec![*snap_idx], format!("{path} has orphaned pending transactions {pending:?}"));
    }
    r
}

/// Per session, accepted writes get increasing txids in submission order,
/// and nobody observes a later write of a session without its earlier ones.
pub fn check_linearized_writes(h: &History) -> CheckResult {
    let mut r = CheckResult::new(Z2);
    for &s in &h.sessions {
        let mut last: Option<(u32, Txid, usize)> = None;
        let mut results: Vec<_> = h.results.iter().filter(|x| x.session == s).collect();
        results.sort_by_key(|x| x.seq);
        for res in results {
            let Some(t) = res.outcome.success_txid() else {
                continue;
            };
            if let Some((seq, prev, idx)) = last {
                if t <= prev {
                    r.fail(
                        vec![idx, res.idx],
                        format!("session {s}: request #{} got txid {t} after #{seq} got {prev}", res.seq),
                    );
                }
            }
            last = Some((res.seq, t, res.idx));
        }
        let mut commits: Vec<_> = h
            .commits
            .iter()
            .filter(|c| c.session == s && !c.request.contains(':'))
            .filter_map(|c| {
                let seq: u32 = c.request.split('#').nth(1)?.parse().ok()?;
                Some((seq, c))
            })
            .collect();
        commits.sort_by_key(|(seq, _)| *seq);
        for w in commits.windows(2) {
            if w[1].1.txid <= w[0].1.txid {
                r.fail(
                    vec![w[0].1.idx, w[1].1.idx],
                    format!("session {s}: commit order inverts submission order"),
                );
            }
        }
    }
    // Observer side: seeing one write of session A implies seeing A's
    // earlier writes to the paths read afterwards.
    let writes_by_txid: BTreeMap<Txid, &history::CommitEv> = h.commits.iter().map(|c| (c.txid, c)).collect();
    for &obs in &h.sessions {
        let mut seen: BTreeMap<SessionId, Txid> = BTreeMap::new();
        for (idx, a) in h.app_stream(obs) {
            if let AppRef::Observe(i) = a {
                let o = &h.observes[i];
                for (&author, &t) in &seen {
                    let floor = h
                        .commits
                        .iter()
                        .filter(|c| c.session == author && c.txid <= t && c.nodes.iter().any(|n| n.commit.path == o.path))
                        .map(|c| c.txid)
                        .max();
                    if let Some(u) = floor {
                        if o.mtxid < u {
                            r.fail(
                                vec![idx],
                                format!(
                                    "session {obs} read {} at txid {} after seeing txid {t} of session {author}, which follows its write {u}",
                                    o.path, o.mtxid
                                ),
                            );
                        }
                    }
                }
            }
            if let Some(t) = h.app_txid(a) {
                if let Some(c) = writes_by_txid.get(&t) {
                    let e = seen.entry(c.session).or_insert(0);
                    *e = (*e).max(t);
                }
            }
        }
    }
    r
}

/// Observations never go back in time, agree with the global txid order,
/// accepted updates persist, and every request terminates.
pub fn check_single_system_image(h: &History) -> CheckResult {
    let mut r = CheckResult::new(Z3);
    let mut last: BTreeMap<(SessionId, &str), (Txid, usize)> = BTreeMap::new();
    for o in &h.observes {
        let k = (o.session, o.path.as_str());
        if let Some(&(prev, idx)) = last.get(&k) {
            if o.mtxid < prev {
                r.fail(
                    vec![idx, o.idx],
                    format!("session {} saw {} at txid {prev} then {}", o.session, o.path, o.mtxid),
                );
            }
        }
        last.insert(k, (o.mtxid, o.idx));
    }
    let mut put_last: BTreeMap<(&str, &str), (Txid, usize)> = BTreeMap::new();
    for p in &h.puts {
        let k = (p.region.as_str(), p.path.as_str());
        if let Some(&(prev, idx)) = put_last.get(&k) {
            if p.txid < prev {
                r.fail(
                    vec![idx, p.idx],
                    format!("region {} rolled {} back from txid {prev} to {}", p.region, p.path, p.txid),
                );
            }
        }
        put_last.insert(k, (p.txid, p.idx));
    }
    // A read must reflect every commit on its path up to the newest txid its
    // session had already been shown.
    let mut commits_on: BTreeMap<&str, Vec<Txid>> = BTreeMap::new();
    for c in &h.commits {
        for n in &c.nodes {
            commits_on.entry(n.commit.path.as_str()).or_default().push(c.txid);
        }
    }
    for v in commits_on.values_mut() {
        v.sort_unstable();
    }
    for &s in &h.sessions {
        let stream = h.app_stream(s);
        for o in h.observes.iter().filter(|o| o.session == s) {
            let fetch = h
                .fetches
                .iter()
                .filter(|f| f.session == s && f.seq == o.seq && f.idx < o.idx)
                .map(|f| f.idx)
                .max()
                .unwrap_or(o.idx);
            let known = stream
                .iter()
                .filter(|(idx, _)| *idx < fetch)
                .filter_map(|(_, a)| h.app_txid(*a))
                .max()
                .unwrap_or(0);
            let floor = commits_on
                .get(o.path.as_str())
                .and_then(|ts| ts.iter().rev().find(|&&t| t <= known))
                .copied();
            if let Some(u) = floor {
                if o.mtxid < u {
                    r.fail(
                        vec![fetch, o.idx],
                        format!(
                            "session {s} read {} at txid {} although it had seen txid {known} (path last written at {u})",
                            o.path, o.mtxid
                        ),
                    );
                }
            }
        }
    }
    if let Some((snap_idx, st)) = &h.final_state {
        let mut commits: Vec<_> = h.commits.iter().collect();
        commits.sort_by_key(|c| c.txid);
        for c in &commits {
            for n in &c.nodes {
                let p = n.commit.path.as_str();
                let later = commits_on.get(p).is_some_and(|ts| ts.iter().any(|&t| t > c.txid));
                match st.system.get(p) {
                    Some(img) if img.mtxid >= c.txid => {}
                    None if n.commit.image.is_none() || later => {}
                    _ => r.fail(vec![c.idx, *snap_idx], format!("update {} to {p} was rolled back", c.txid)),
                }
            }
        }
    }
    let finished: BTreeSet<(SessionId, u32)> = h
        .results
        .iter()
        .map(|x| (x.session, x.seq))
        .chain(h.observes.iter().map(|x| (x.session, x.seq)))
        .collect();
    for sub in &h.submits {
        if !finished.contains(&(sub.session, sub.seq)) {
            r.fail(
                vec![sub.idx],
                format!("session {} request #{} ({}) never completed", sub.session, sub.seq, sub.op),
            );
        }
    }
    r
}

/// Notifications precede any newer data the subscriber sees, arrive in
/// txid order, and arrive exactly once.
pub fn check_ordered_notifications(h: &History) -> CheckResult {
    let mut r = CheckResult::new(Z4);
    let mut count: BTreeMap<(SessionId, u64, Txid), Vec<usize>> = BTreeMap::new();
    for n in &h.notifies {
        count.entry((n.session, n.watch, n.txid)).or_default().push(n.idx);
    }
    for ((s, w, t), idxs) in &count {
        if idxs.len() > 1 {
            r.fail(idxs.clone(), format!("session {s} saw notification ({w}, {t}) {} times", idxs.len()));
        }
    }
    for &s in &h.sessions {
        let mut last: Option<(Txid, usize)> = None;
        for n in h.notifies.iter().filter(|n| n.session == s) {
            if let Some((prev, idx)) = last {
                if n.txid < prev {
                    r.fail(
                        vec![idx, n.idx],
                        format!("session {s} got notification for txid {} after {prev}", n.txid),
                    );
                }
            }
            last = Some((n.txid, n.idx));
        }
    }
    for f in &h.fired {
        for rec in &f.watches {
            for &s in &rec.subscribers {
                let got = count.get(&(s, rec.id, f.txid)).and_then(|v| v.first()).copied();
                let bound = got.unwrap_or(h.len);
                if let Some(o) = h
                    .observes
                    .iter()
                    .find(|o| o.session == s && o.idx > f.idx && o.idx < bound && o.mtxid > f.txid)
                {
                    r.fail(
                        vec![o.idx, got.unwrap_or(f.idx)],
                        format!(
                            "session {s} read {} at txid {} before the notification of watch {} for txid {}",
                            o.path, o.mtxid, rec.id, f.txid
                        ),
                    );
                }
                let must = !h.disconnected.contains_key(&s) && !h.closed.contains_key(&s);
                if got.is_none() && must {
                    r.fail(
                        vec![f.idx],
                        format!("session {s} never received watch {} for txid {}", rec.id, f.txid),
                    );
                }
            }
        }
    }
    r
}

pub fn check_epoch_balance(h: &History) -> CheckResult {
    let mut r = CheckResult::new(EPOCH);
    match &h.final_state {
        None => r.fail(vec![], "trace has no final snapshot"),
        Some((idx, st)) => {
            for (region, ids) in &st.epochs {
                if !ids.is_empty() {
                    r.fail(vec![*idx], format!("epoch of region {region} not empty at quiescence: {ids:?}"));
                }
            }
        }
    }
    r
}

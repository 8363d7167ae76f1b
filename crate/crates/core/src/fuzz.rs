//! Random workloads, the crash-point matrix and parallel seed sweeps.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checker::{check_trace, Report};
use crate::error::Result;
use crate::model::SessionId;
use crate::queue::QueueMode;
use crate::sim::fault::{step, FaultMode, FaultSpec, FunctionKind};
use crate::sim::scenario::{OpKind, ScenarioConfig, WorkloadOp};
use crate::sim::trace::Trace;
use crate::sim::world::run_to_quiescence;

/// One cell of the crash matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultPoint {
    Crash(FunctionKind, &'static str),
    /// A client stops answering while owning ephemeral nodes.
    ClientUnresponsive,
}

impl fmt::Display for FaultPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultPoint::Crash(k, p) => write!(f, "{k}:{p}"),
            FaultPoint::ClientUnresponsive => write!(f, "client:unresponsive"),
        }
    }
}

/// Every crash point of the atomic-push pipeline, plus the unresponsive
/// client.
pub fn fault_matrix() -> Vec<FaultPoint> {
    let mut v = vec![
        FaultPoint::Crash(FunctionKind::Writer, step::BEFORE_LOCK),
        FaultPoint::Crash(FunctionKind::Writer, step::AFTER_LOCK),
        FaultPoint::Crash(FunctionKind::Writer, step::BEFORE_PUSH),
        FaultPoint::Crash(FunctionKind::Writer, step::AFTER_COMMIT_BEFORE_UNLOCK),
    ];
    v.extend(step::DISTRIBUTOR.iter().map(|p| FaultPoint::Crash(FunctionKind::Distributor, p)));
    v.extend(step::WATCH.iter().map(|p| FaultPoint::Crash(FunctionKind::Watch, p)));
    v.extend(step::HEARTBEAT.iter().map(|p| FaultPoint::Crash(FunctionKind::Heartbeat, p)));
    v.push(FaultPoint::ClientUnresponsive);
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzParams {
    pub sessions: usize,
    pub ops: usize,
    pub regions: Vec<String>,
    pub queue_mode: QueueMode,
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams {
            sessions: 4,
            ops: 50,
            regions: vec!["home".into(), "remote".into()],
            queue_mode: QueueMode::AtomicPush,
        }
    }
}

const PATHS: [&str; 6] = ["/a", "/b", "/a/x", "/a/y", "/b/z", "/a/x/k"];

fn random_op(rng: &mut ChaCha8Rng, s: SessionId) -> WorkloadOp {
    let path = *PATHS.choose(rng).expect("paths");
    let roll = rng.gen_range(0..100);
    match roll {
        0..=21 => {
            let mut op = WorkloadOp::new(s, OpKind::Create, path).data(&[b'c', rng.gen()]);
            if rng.gen_bool(0.2) {
                op = op.flag("ephemeral");
            }
            if rng.gen_bool(0.1) {
                op = WorkloadOp::new(s, OpKind::Create, "/a/s-").flag("sequential");
            }
            op
        }
        22..=39 => {
            let mut op = WorkloadOp::new(s, OpKind::SetData, path).data(&[b's', rng.gen()]);
            if rng.gen_bool(0.2) {
                op = op.version(rng.gen_range(0..3));
            }
            op
        }
        40..=52 => WorkloadOp::new(s, OpKind::Delete, path),
        53..=69 => {
            let op = WorkloadOp::new(s, OpKind::GetData, path);
            if rng.gen_bool(0.5) {
                op.watch()
            } else {
                op
            }
        }
        70..=84 => {
            let op = WorkloadOp::new(s, OpKind::Exists, path);
            if rng.gen_bool(0.5) {
                op.watch()
            } else {
                op
            }
        }
        _ => {
            let p = *["/", "/a", "/b"].choose(rng).expect("parents");
            let op = WorkloadOp::new(s, OpKind::GetChildren, p);
            if rng.gen_bool(0.5) {
                op.watch()
            } else {
                op
            }
        }
    }
}

/// Random scenario without faults.
pub fn gen_scenario(seed: u64, p: &FuzzParams) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let k = p.sessions.max(1);
    let sessions: Vec<(SessionId, String)> = (1..=k as SessionId)
        .map(|s| (s, p.regions[(s as usize - 1) % p.regions.len().max(1)].clone()))
        .collect();
    let refs: Vec<(SessionId, &str)> = sessions.iter().map(|(s, r)| (*s, r.as_str())).collect();
    let mut cfg = ScenarioConfig::new(seed, &refs);
    cfg.queue_mode = p.queue_mode;
    cfg.jitter_ticks = rng.gen_range(0..3);
    cfg.latencies.distributor = rng.gen_range(0..4);
    let mut at = 0;
    // Room for the close and unresponsive-client ops added later.
    for _ in 0..p.ops.saturating_sub(3).max(1) {
        at += rng.gen_range(0..4);
        let s = rng.gen_range(1..=k as SessionId);
        cfg.workload.push(random_op(&mut rng, s).at(at));
    }
    if rng.gen_bool(0.1) {
        let s = rng.gen_range(1..=k as SessionId);
        cfg.workload.push(WorkloadOp::new(s, OpKind::Close, "").at(at + 1));
    }
    cfg
}

/// Random scenario with the given matrix cell applied.
pub fn gen_fault_scenario(seed: u64, p: &FuzzParams, point: FaultPoint) -> ScenarioConfig {
    let mut cfg = gen_scenario(seed, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfa17);
    match point {
        FaultPoint::Crash(kind, label) => {
            let mut mode = if rng.gen_bool(0.5) {
                FaultMode::CrashAfterStep
            } else {
                FaultMode::CrashBeforeStep
            };
            let spec = FaultSpec::new(kind, label, rng.gen_range(1..=3), mode);
            if spec.validate(cfg.queue_mode).is_err() {
                mode = FaultMode::CrashBeforeStep;
            }
            cfg.faults.push(FaultSpec { mode, ..spec });
            if kind == FunctionKind::Heartbeat {
                add_unresponsive_owner(&mut cfg, &mut rng);
            }
        }
        FaultPoint::ClientUnresponsive => add_unresponsive_owner(&mut cfg, &mut rng),
    }
    cfg
}

fn add_unresponsive_owner(cfg: &mut ScenarioConfig, rng: &mut ChaCha8Rng) {
    let s = rng.gen_range(1..=cfg.sessions.len() as SessionId);
    let end = cfg.workload.last().map(|o| o.at).unwrap_or(0);
    let t = rng.gen_range(0..=end);
    let name = format!("/e{s}");
    let pos = cfg.workload.partition_point(|o| o.at <= t);
    cfg.workload.insert(
        pos,
        WorkloadOp::new(s, OpKind::Create, &name).flag("ephemeral").at(t),
    );
    let gone = t + rng.gen_range(1..20);
    let pos = cfg.workload.partition_point(|o| o.at <= gone);
    cfg.workload.insert(pos, WorkloadOp::new(s, OpKind::Disconnect, "").at(gone));
}

/// Scenario for the sequence-number queue with a writer that stops
/// between push and commit while the distributor lags behind.
pub fn gen_seq_gap_scenario(seed: u64, p: &FuzzParams) -> ScenarioConfig {
    let params = FuzzParams {
        queue_mode: QueueMode::SequenceNumber,
        ..p.clone()
    };
    let mut cfg = gen_scenario(seed, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e9);
    cfg.lock_max_hold_ticks = rng.gen_range(2..6);
    cfg.latencies.distributor = rng.gen_range(10..30);
    cfg.faults.push(FaultSpec::new(
        FunctionKind::Writer,
        step::BETWEEN_PUSH_AND_COMMIT,
        rng.gen_range(1..=2),
        FaultMode::CrashBeforeStep,
    ));
    cfg
}

/// Scenario where the distributor crashes in the middle of a batch after
/// watch functions were started, so the retried batch sends the same
/// notifications again.
pub fn gen_duplicate_notification_scenario(seed: u64, p: &FuzzParams) -> ScenarioConfig {
    let mut cfg = gen_scenario(seed, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0b1e);
    // A slow distributor lets several updates pile up into one batch.
    cfg.latencies.distributor = rng.gen_range(4..10);
    cfg.faults.push(FaultSpec::new(
        FunctionKind::Distributor,
        step::AFTER_INVOKEWATCH,
        rng.gen_range(1..=3),
        FaultMode::CrashAfterStep,
    ));
    cfg
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub report: Report,
    pub trace: Trace,
}

impl SeedRun {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

pub fn run_seed(config: ScenarioConfig) -> Result<SeedRun> {
    let trace = run_to_quiescence(&config)?;
    let report = check_trace(&trace)?;
    Ok(SeedRun {
        seed: config.seed,
        config,
        report,
        trace,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SweepSummary {
    pub runs: usize,
    pub failures: Vec<u64>,
    /// Lowest failing seed, with its report.
    pub first_failure: Option<(u64, Report)>,
    pub errors: Vec<(u64, String)>,
}

impl SweepSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.errors.is_empty()
    }
}

/// Runs `make(seed)` for every seed in parallel and collects failures.
pub fn sweep<F>(seeds: impl IntoIterator<Item = u64>, make: F) -> SweepSummary
where
    F: Fn(u64) -> ScenarioConfig + Sync,
{
    let seeds: Vec<u64> = seeds.into_iter().collect();
    let mut outcomes: Vec<(u64, std::result::Result<Option<Report>, String>)> = seeds
        .par_iter()
        .map(|&seed| {
            let out = match run_seed(make(seed)) {
                Ok(r) if r.passed() => Ok(None),
                Ok(r) => Ok(Some(r.report)),
                Err(e) => Err(e.to_string()),
            };
            (seed, out)
        })
        .collect();
    outcomes.sort_by_key(|(s, _)| *s);
    let mut sum = SweepSummary {
        runs: outcomes.len(),
        ..Default::default()
    };
    for (seed, out) in outcomes {
        match out {
            Ok(None) => {}
            Ok(Some(report)) => {
                sum.failures.push(seed);
                if sum.first_failure.is_none() {
                    sum.first_failure = Some((seed, report));
                }
            }
            Err(e) => sum.errors.push((seed, e)),
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let p = FuzzParams::default();
        assert_eq!(gen_scenario(7, &p), gen_scenario(7, &p));
        assert_ne!(gen_scenario(7, &p).workload, gen_scenario(8, &p).workload);
    }

    #[test]
    fn generated_scenarios_validate() {
        let p = FuzzParams::default();
        for seed in 0..50 {
            for point in fault_matrix() {
                gen_fault_scenario(seed, &p, point).validate().unwrap();
            }
            gen_seq_gap_scenario(seed, &p).validate().unwrap();
        }
    }

    #[test]
    fn matrix_has_every_pipeline_point() {
        let m = fault_matrix();
        assert_eq!(m.len(), 4 + 5 + 2 + 2 + 1);
        assert!(!m.contains(&FaultPoint::Crash(FunctionKind::Writer, step::BETWEEN_PUSH_AND_COMMIT)));
    }

    #[test]
    fn workload_respects_bounds() {
        let p = FuzzParams {
            sessions: 3,
            ops: 20,
            ..Default::default()
        };
        let cfg = gen_scenario(1, &p);
        assert!(cfg.workload.len() <= 20);
        assert!(cfg.workload.iter().all(|o| (1..=3).contains(&o.session)));
        assert!(cfg.workload.windows(2).all(|w| w[0].at <= w[1].at));
    }
}

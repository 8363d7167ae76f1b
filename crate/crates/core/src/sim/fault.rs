//! Crash-injection points.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::queue::QueueMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionKind {
    Writer,
    Distributor,
    Watch,
    Heartbeat,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 4] = [
        FunctionKind::Writer,
        FunctionKind::Distributor,
        FunctionKind::Watch,
        FunctionKind::Heartbeat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionKind::Writer => "writer",
            FunctionKind::Distributor => "distributor",
            FunctionKind::Watch => "watch",
            FunctionKind::Heartbeat => "heartbeat",
        }
    }

    /// Published step labels, in execution order.
    pub fn steps(self) -> &'static [&'static str] {
        match self {
            FunctionKind::Writer => &step::WRITER,
            FunctionKind::Distributor => &step::DISTRIBUTOR,
            FunctionKind::Watch => &step::WATCH,
            FunctionKind::Heartbeat => &step::HEARTBEAT,
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub mod step {
    pub const BEFORE_LOCK: &str = "before-lock";
    pub const AFTER_LOCK: &str = "after-lock";
    pub const BEFORE_PUSH: &str = "before-push";
    pub const BETWEEN_PUSH_AND_COMMIT: &str = "between-push-and-commit";
    pub const AFTER_COMMIT_BEFORE_UNLOCK: &str = "after-commit-before-unlock";
    pub const WRITER: [&str; 5] = [
        BEFORE_LOCK,
        AFTER_LOCK,
        BEFORE_PUSH,
        BETWEEN_PUSH_AND_COMMIT,
        AFTER_COMMIT_BEFORE_UNLOCK,
    ];

    pub const BEFORE_TRYCOMMIT: &str = "before-trycommit";
    pub const AFTER_TRYCOMMIT: &str = "after-trycommit";
    pub const AFTER_DATAUPDATE: &str = "after-dataupdate";
    pub const AFTER_INVOKEWATCH: &str = "after-invokewatch";
    pub const BEFORE_POPTRANSACTION: &str = "before-poptransaction";
    pub const DISTRIBUTOR: [&str; 5] = [
        BEFORE_TRYCOMMIT,
        AFTER_TRYCOMMIT,
        AFTER_DATAUPDATE,
        AFTER_INVOKEWATCH,
        BEFORE_POPTRANSACTION,
    ];

    pub const BEFORE_DELIVER: &str = "before-deliver";
    pub const AFTER_DELIVER: &str = "after-deliver";
    pub const WATCH: [&str; 2] = [BEFORE_DELIVER, AFTER_DELIVER];

    pub const BEFORE_PING: &str = "before-ping";
    pub const BEFORE_EVICT: &str = "before-evict";
    pub const HEARTBEAT: [&str; 2] = [BEFORE_PING, BEFORE_EVICT];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultMode {
    /// Crash on reaching the label; the step after it does not run.
    #[default]
    CrashBeforeStep,
    /// Run the step after the label, then crash.
    CrashAfterStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub target: FunctionKind,
    pub point: String,
    /// 1-based index among all invocations of `target`, retries included.
    pub occurrence: u64,
    #[serde(default)]
    pub mode: FaultMode,
}

impl FaultSpec {
    pub fn new(target: FunctionKind, point: &str, occurrence: u64, mode: FaultMode) -> Self {
        FaultSpec {
            target,
            point: point.to_string(),
            occurrence,
            mode,
        }
    }

    /// Rejects labels outside the target's step set and points that the
    /// queue mode makes unreachable.
    pub fn validate(&self, mode: QueueMode) -> Result<(), String> {
        if !self.target.steps().contains(&self.point.as_str()) {
            return Err(format!(
                "`{}` is not a {} step (expected one of {})",
                self.point,
                self.target,
                self.target.steps().join(", ")
            ));
        }
        if self.occurrence == 0 {
            return Err("occurrence is 1-based".into());
        }
        if self.target == FunctionKind::Writer && mode == QueueMode::AtomicPush {
            if self.point == step::BETWEEN_PUSH_AND_COMMIT {
                return Err("push and commit are one atomic step in atomic-push mode".into());
            }
            if self.point == step::BEFORE_PUSH && self.mode == FaultMode::CrashAfterStep {
                return Err("a crash right after the push would split push and commit, which atomic-push mode forbids".into());
            }
        }
        Ok(())
    }
}

/// What an invocation must do on reaching a labeled point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointAction {
    Continue,
    CrashNow,
    CrashAfterStep,
}

/// Fault schedule; each spec fires at most once.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    specs: Vec<(FaultSpec, bool)>,
}

impl FaultPlan {
    pub fn new(specs: &[FaultSpec]) -> Self {
        FaultPlan {
            specs: specs.iter().cloned().map(|s| (s, false)).collect(),
        }
    }

    pub fn check(&mut self, target: FunctionKind, point: &str, occurrence: u64) -> PointAction {
        for (spec, fired) in &mut self.specs {
            if !*fired && spec.target == target && spec.point == point && spec.occurrence == occurrence {
                *fired = true;
                return match spec.mode {
                    FaultMode::CrashBeforeStep => PointAction::CrashNow,
                    FaultMode::CrashAfterStep => PointAction::CrashAfterStep,
                };
            }
        }
        PointAction::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_must_belong_to_target() {
        let ok = FaultSpec::new(FunctionKind::Writer, "before-lock", 1, FaultMode::CrashBeforeStep);
        assert!(ok.validate(QueueMode::AtomicPush).is_ok());
        let bad = FaultSpec::new(FunctionKind::Writer, "after-dataupdate", 1, FaultMode::CrashBeforeStep);
        assert!(bad.validate(QueueMode::AtomicPush).is_err());
    }

    #[test]
    fn push_commit_split_only_in_sequence_mode() {
        let f = FaultSpec::new(FunctionKind::Writer, "between-push-and-commit", 1, FaultMode::CrashBeforeStep);
        assert!(f.validate(QueueMode::AtomicPush).is_err());
        assert!(f.validate(QueueMode::SequenceNumber).is_ok());
        let g = FaultSpec::new(FunctionKind::Writer, "before-push", 1, FaultMode::CrashAfterStep);
        assert!(g.validate(QueueMode::AtomicPush).is_err());
        assert!(g.validate(QueueMode::SequenceNumber).is_ok());
    }

    #[test]
    fn spec_fires_once() {
        let mut p = FaultPlan::new(&[FaultSpec::new(FunctionKind::Watch, "after-deliver", 2, FaultMode::CrashAfterStep)]);
        assert_eq!(p.check(FunctionKind::Watch, "after-deliver", 1), PointAction::Continue);
        assert_eq!(p.check(FunctionKind::Watch, "after-deliver", 2), PointAction::CrashAfterStep);
        assert_eq!(p.check(FunctionKind::Watch, "after-deliver", 2), PointAction::Continue);
    }
}

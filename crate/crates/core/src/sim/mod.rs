//! Discrete-event simulation: scheduler, fault injection, traces, scenario
//! files and the world that ties the protocol together.

pub mod fault;
pub mod scenario;
pub mod scheduler;
pub mod trace;
pub mod world;

pub use fault::{FaultMode, FaultSpec, FunctionKind};
pub use scenario::{Latencies, OpKind, ScenarioConfig, SessionSpec, WorkloadOp};
pub use scheduler::{Scheduler, SimTime};
pub use trace::{Trace, TraceEvent, TraceKind};
pub use world::{run_to_quiescence, run_with_dump, World};

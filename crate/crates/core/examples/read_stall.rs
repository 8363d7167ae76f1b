//! A read that returns data newer than the session has seen, while that
//! session's own notification for it is still in flight, waits for the
//! notification before completing.

use coordsim::sim::{run_to_quiescence, FaultMode, FaultSpec, FunctionKind, OpKind, ScenarioConfig, TraceKind, WorkloadOp};

fn main() -> coordsim::Result<()> {
    let mut cfg = ScenarioConfig::new(3, &[(1, "home"), (2, "home")]);
    cfg.retry_delay_ticks = 20;
    cfg.faults.push(FaultSpec::new(FunctionKind::Watch, "before-deliver", 1, FaultMode::CrashBeforeStep));
    cfg.workload = vec![
        WorkloadOp::new(1, OpKind::Create, "/x").data(b"a").at(0),
        WorkloadOp::new(2, OpKind::GetData, "/x").watch().at(30),
        WorkloadOp::new(1, OpKind::SetData, "/x").data(b"b").at(40),
        WorkloadOp::new(2, OpKind::GetData, "/x").at(55),
    ];
    let trace = run_to_quiescence(&cfg)?;
    for e in trace.events.iter().filter(|e| e.session == Some(2)) {
        if matches!(e.kind, TraceKind::StorageRead | TraceKind::NotifyReceived | TraceKind::ClientReadObserve) {
            println!("t={:<4} {:<18?} txid {:?}", e.time, e.kind, e.txid);
        }
    }
    Ok(())
}

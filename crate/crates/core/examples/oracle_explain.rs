//! Finds a sequential order of three concurrent sessions' operations that
//! reproduces every observed result and the final tree.

use coordsim::checker::oracle::explain_run;
use coordsim::sim::{run_to_quiescence, OpKind, ScenarioConfig, WorkloadOp};

fn main() -> coordsim::Result<()> {
    let mut cfg = ScenarioConfig::new(7, &[(1, "home"), (2, "home"), (3, "home")]);
    cfg.jitter_ticks = 2;
    cfg.workload = vec![
        WorkloadOp::new(1, OpKind::Create, "/a").data(b"1"),
        WorkloadOp::new(2, OpKind::SetData, "/a").data(b"2"),
        WorkloadOp::new(3, OpKind::Create, "/a/b"),
        WorkloadOp::new(1, OpKind::GetData, "/a"),
        WorkloadOp::new(2, OpKind::Delete, "/a"),
    ];
    let trace = run_to_quiescence(&cfg)?;
    match explain_run(&cfg, &trace)? {
        Some(order) => {
            println!("sequential order (session, op index):");
            for (s, i) in order {
                let session = s as u32 + 1;
                let op = cfg.workload.iter().filter(|o| o.session == session).nth(i).expect("op in workload");
                println!("  s{session} {:?} {}", op.op, op.path);
            }
        }
        None => println!("no sequential order explains this run"),
    }
    Ok(())
}

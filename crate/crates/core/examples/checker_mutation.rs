//! Checks a clean trace, then delivers one notification twice and checks again.

use coordsim::checker::check_trace;
use coordsim::sim::{run_to_quiescence, ScenarioConfig, TraceKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = include_str!("../scenarios/demo.json");
    let trace = run_to_quiescence(&ScenarioConfig::from_json(text)?)?;
    println!("clean trace:");
    print!("{}", check_trace(&trace)?);

    let mut bad = trace.clone();
    let dup = bad
        .events
        .iter()
        .position(|e| e.kind == TraceKind::NotifyReceived)
        .ok_or("demo has no notification")?;
    let copy = bad.events[dup].clone();
    bad.events.insert(dup + 1, copy);
    println!("\nwith one notification delivered twice:");
    print!("{}", check_trace(&bad)?);
    Ok(())
}

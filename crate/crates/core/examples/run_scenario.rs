//! Runs a scenario file and prints the trace summary and check report.
//!
//! cargo run --example run_scenario -- scenarios/crash.json

use std::collections::BTreeMap;

use coordsim::checker::check_trace;
use coordsim::sim::{run_to_quiescence, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/demo.json").into());
    let cfg = ScenarioConfig::from_json(&std::fs::read_to_string(&path)?)?;
    let trace = run_to_quiescence(&cfg)?;

    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for e in &trace.events {
        *kinds.entry(format!("{:?}", e.kind)).or_default() += 1;
    }
    println!("{path}: {} events", trace.len());
    for (k, n) in kinds {
        println!("  {k:<22} {n}");
    }
    print!("{}", check_trace(&trace)?);
    Ok(())
}

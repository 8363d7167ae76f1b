//! Sweeps generated workloads over every fault point, then shows that the
//! sequence-number queue mode breaks atomicity under a crash between push
//! and commit.

use coordsim::fuzz::{fault_matrix, gen_fault_scenario, gen_seq_gap_scenario, sweep, FuzzParams};

fn main() {
    let p = FuzzParams::default();
    let seeds = 0..50;
    for point in fault_matrix() {
        let s = sweep(seeds.clone(), |seed| gen_fault_scenario(seed, &p, point));
        println!("{:<36} {} runs, {} failing", point.to_string(), s.runs, s.failures.len());
    }

    let s = sweep(0..200, |seed| gen_seq_gap_scenario(seed, &p));
    println!("\nseq-gap: {} of {} runs fail", s.failures.len(), s.runs);
    if let Some((seed, report)) = s.first_failure {
        println!("first counterexample, seed {seed}:");
        print!("{report}");
    }
}

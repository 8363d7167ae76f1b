mod common;

use common::{oracle_scenario, program_triples, small_alphabet};
use coordsim::checker::oracle::explain_run;
use coordsim::fuzz::{gen_scenario, FuzzParams};
use coordsim::sim::{run_to_quiescence, OpKind};
use rayon::prelude::*;

#[test]
fn every_small_workload_has_a_sequential_explanation() {
    let cases = program_triples(small_alphabet(1).len(), 2);
    assert_eq!(cases.len(), 14190);
    let bad: Vec<usize> = cases
        .par_iter()
        .enumerate()
        .filter_map(|(i, progs)| {
            let cfg = oracle_scenario(i as u64, progs);
            let trace = run_to_quiescence(&cfg).ok()?;
            match explain_run(&cfg, &trace) {
                Ok(Some(_)) => None,
                _ => Some(i),
            }
        })
        .collect();
    assert!(bad.is_empty(), "{} unexplained, first {:?}", bad.len(), cases[bad[0]]);
}

#[test]
fn random_longer_workloads_have_sequential_explanations() {
    let p = FuzzParams {
        sessions: 3,
        ops: 21,
        regions: vec!["home".into(), "remote".into()],
        ..Default::default()
    };
    for seed in 0..300 {
        let mut cfg = gen_scenario(seed, &p);
        cfg.workload.retain(|o| o.op != OpKind::Close);
        let trace = run_to_quiescence(&cfg).unwrap();
        assert!(explain_run(&cfg, &trace).unwrap().is_some(), "seed {seed}");
    }
}

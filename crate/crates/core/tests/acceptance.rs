//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use common::{
    app_notification_counts, contention_outcome, contention_scenario, oracle_scenario, program_triples,
    read_case, read_timing, small_alphabet, wire_duplicates, ReadCase,
};
use coordsim::checker::check_trace;
use coordsim::checker::oracle::explain_run;
use coordsim::cost::{baselines, CostParams};
use coordsim::fuzz::{
    fault_matrix, gen_duplicate_notification_scenario, gen_fault_scenario, gen_scenario, gen_seq_gap_scenario,
    run_seed, sweep, FuzzParams,
};
use coordsim::model::NodeImage;
use coordsim::sim::{run_to_quiescence, OpKind};
use coordsim::storage::records::table;
use coordsim::storage::KvStore;
use coordsim::sync::{commit_unlock, lock_acquire, lock_release, Commit, NodeCommit, Release};

const MATRIX_SEEDS: u64 = 200;
const MATRIX_BUDGET: Duration = Duration::from_secs(300);
const SEQ_GAP_SEEDS: u64 = 500;
const ORACLE_SAMPLES: u64 = 500;
const DUPLICATE_SEEDS: u64 = 100;
const CONTENDERS: u32 = 10;
const CONTENDED_OPS: u64 = 100;
const READ_COST_100K: f64 = 0.04;
const WRITE_COST_100K: f64 = 1.12;
const WRITE_TOLERANCE: f64 = 0.005;
const BAND: (f64, f64) = (1.0e6, 3.75e6);
const HIGH_READ_FRACTIONS: [f64; 2] = [0.99, 1.0];

type Outcome = Result<String, String>;

fn fault_matrix_soundness() -> Outcome {
    let p = FuzzParams::default();
    let start = Instant::now();
    let mut runs = 0;
    for point in fault_matrix() {
        let sum = sweep(0..MATRIX_SEEDS, |s| gen_fault_scenario(s, &p, point));
        runs += sum.runs;
        if let Some((seed, _)) = &sum.first_failure {
            return Err(format!("{point}: seed {seed} fails ({} failing)", sum.failures.len()));
        }
        if let Some((seed, e)) = sum.errors.first() {
            return Err(format!("{point}: seed {seed}: {e}"));
        }
    }
    let took = start.elapsed();
    if took > MATRIX_BUDGET {
        return Err(format!("{runs} runs took {took:.1?}, budget {MATRIX_BUDGET:?}"));
    }
    Ok(format!("{} points x {MATRIX_SEEDS} seeds, {runs} runs in {took:.1?}", fault_matrix().len()))
}

fn atomicity_assumption() -> Outcome {
    let p = FuzzParams::default();
    let sum = sweep(0..SEQ_GAP_SEEDS, |s| gen_seq_gap_scenario(s, &p));
    if let Some((seed, e)) = sum.errors.first() {
        return Err(format!("seed {seed}: {e}"));
    }
    match &sum.first_failure {
        Some((seed, report)) => {
            let first = report
                .results
                .iter()
                .find(|c| !c.passed())
                .map(|c| c.name)
                .unwrap_or_default();
            Ok(format!(
                "{} of {SEQ_GAP_SEEDS} seeds violate; first seed {seed} ({first})",
                sum.failures.len()
            ))
        }
        None => Err(format!("no violation in {SEQ_GAP_SEEDS} seeds")),
    }
}

fn oracle_equivalence() -> Outcome {
    let cases = program_triples(small_alphabet(1).len(), 2);
    let bad: Vec<usize> = cases
        .par_iter()
        .enumerate()
        .filter(|(i, progs)| {
            let cfg = oracle_scenario(*i as u64, &progs[..]);
            !matches!(run_to_quiescence(&cfg).and_then(|t| explain_run(&cfg, &t)), Ok(Some(_)))
        })
        .map(|(i, _)| i)
        .collect();
    if let Some(i) = bad.first() {
        return Err(format!("{} of {} exhaustive cases unexplained, first {:?}", bad.len(), cases.len(), cases[*i]));
    }
    let p = FuzzParams {
        sessions: 3,
        ops: 21,
        ..Default::default()
    };
    let bad: Vec<u64> = (0..ORACLE_SAMPLES)
        .into_par_iter()
        .filter(|&seed| {
            let mut cfg = gen_scenario(seed, &p);
            cfg.workload.retain(|o| o.op != OpKind::Close);
            !matches!(run_to_quiescence(&cfg).and_then(|t| explain_run(&cfg, &t)), Ok(Some(_)))
        })
        .collect();
    if let Some(seed) = bad.first() {
        return Err(format!("sampled seed {seed} unexplained ({} total)", bad.len()));
    }
    Ok(format!(
        "{} exhaustive 3x<=2 cases, {ORACLE_SAMPLES} sampled 3x~6 workloads",
        cases.len()
    ))
}

fn duplicate_absorption() -> Outcome {
    let p = FuzzParams::default();
    let mut wire = 0;
    let mut pairs = 0;
    for seed in 0..DUPLICATE_SEEDS {
        let run = run_seed(gen_duplicate_notification_scenario(seed, &p)).map_err(|e| format!("seed {seed}: {e}"))?;
        if !run.passed() {
            return Err(format!("seed {seed} fails checks"));
        }
        wire += wire_duplicates(&run.trace);
        for (key, n) in app_notification_counts(&run.trace) {
            if n != 1 {
                return Err(format!("seed {seed}: {key:?} surfaced {n} times"));
            }
            pairs += 1;
        }
    }
    if wire == 0 {
        return Err("no duplicate reached a client; the fault did not bite".into());
    }
    Ok(format!("{pairs} (watch, txid) pairs once each, {wire} wire duplicates absorbed"))
}

fn read_stall() -> Outcome {
    let mut notes = vec![];
    for case in [ReadCase::BelowMrd, ReadCase::EpochIntersecting, ReadCase::EpochDisjoint] {
        let (cfg, s, seq) = read_case(case);
        let trace = run_to_quiescence(&cfg).map_err(|e| e.to_string())?;
        if !check_trace(&trace).map_err(|e| e.to_string())?.passed() {
            return Err(format!("{case:?}: checks fail"));
        }
        let t = read_timing(&trace, s, seq).ok_or(format!("{case:?}: probe read missing"))?;
        let pending = t.first_notify_after_fetch.is_some_and(|n| n > t.fetch_time);
        let ok = match case {
            ReadCase::BelowMrd => t.fetched_mtxid < t.mrd_at_fetch && pending && t.observe_time == t.fetch_time,
            ReadCase::EpochIntersecting => {
                t.fetched_mtxid > t.mrd_at_fetch && t.own_notify_between && t.observe_time > t.fetch_time
            }
            ReadCase::EpochDisjoint => {
                t.fetched_mtxid > t.mrd_at_fetch && pending && !t.own_notify_between && t.observe_time == t.fetch_time
            }
        };
        if !ok {
            return Err(format!("{case:?}: {t:?}"));
        }
        notes.push(format!("{case:?} +{}", t.observe_time - t.fetch_time));
    }
    Ok(notes.join(", "))
}

fn lock_semantics() -> Outcome {
    let mut kv = KvStore::with_tables(&table::ALL);
    let acquire = |kv: &mut KvStore, path: &str, now: u64| lock_acquire(kv, path, now, 20).map(|l| l.acquired);
    let table_ok = acquire(&mut kv, "/a", 10).map_err(|e| e.to_string())?
        && acquire(&mut kv, "/b", 5).map_err(|e| e.to_string())?
        && !acquire(&mut kv, "/b", 10).map_err(|e| e.to_string())?
        && acquire(&mut kv, "/b", 30).map_err(|e| e.to_string())?;
    if !table_ok {
        return Err("acquire table".into());
    }
    // The holder displaced at 30 can neither release nor commit.
    let stale = NodeCommit {
        path: "/b".into(),
        holder_ts: Some(5),
        image: Some(NodeImage {
            data: b"stale".to_vec(),
            mtxid: 1,
            ..Default::default()
        }),
        seq_counter: None,
    };
    let lost = commit_unlock(&mut kv, &[stale], 1, vec![]).map_err(|e| e.to_string())? == Commit::Lost
        && lock_release(&mut kv, "/b", 5).map_err(|e| e.to_string())? == Release::Lost
        && lock_release(&mut kv, "/b", 30).map_err(|e| e.to_string())? == Release::Released;
    if !lost {
        return Err("stale holder interfered".into());
    }
    let trace = run_to_quiescence(&contention_scenario(CONTENDERS, CONTENDED_OPS)).map_err(|e| e.to_string())?;
    if !check_trace(&trace).map_err(|e| e.to_string())?.passed() {
        return Err("contention run fails checks".into());
    }
    let out = contention_outcome(&trace);
    if out.final_version != out.successes || out.commits != out.successes || out.successes == 0 {
        return Err(format!("{out:?}"));
    }
    Ok(format!(
        "table and stale holder ok; {CONTENDERS}x{CONTENDED_OPS}: version {} = {} successful commits",
        out.final_version, out.successes
    ))
}

fn cost_anchors() -> Outcome {
    let p = CostParams::default();
    let reads = 100_000.0 * p.cost_read(1.0).map_err(|e| e.to_string())?;
    let writes = 100_000.0 * p.cost_write(1.0).map_err(|e| e.to_string())?;
    if (reads - READ_COST_100K).abs() > 1e-12 {
        return Err(format!("100k reads cost {reads}"));
    }
    if (writes - WRITE_COST_100K).abs() > WRITE_TOLERANCE {
        return Err(format!("100k writes cost {writes}"));
    }
    let mut hit = None;
    for b in baselines() {
        for rf in HIGH_READ_FRACTIONS {
            let n = p.break_even(rf, b.daily_cost(), 1.0).map_err(|e| e.to_string())?;
            if (BAND.0..=BAND.1).contains(&n) && hit.is_none() {
                hit = Some((b.name.clone(), rf, n));
            }
        }
    }
    match hit {
        Some((name, rf, n)) => Ok(format!(
            "reads ${reads:.4}, writes ${writes:.4}; {name} at read fraction {rf}: {:.2}M/day",
            n / 1e6
        )),
        None => Err("no preset breaks even inside the band".into()),
    }
}

fn determinism() -> Outcome {
    let p = FuzzParams::default();
    let sum = sweep(0..SEQ_GAP_SEEDS, |s| gen_seq_gap_scenario(s, &p));
    let seeds: Vec<u64> = sum.failures.iter().take(10).copied().collect();
    if seeds.is_empty() {
        return Err("no failing seed to replay".into());
    }
    for &seed in &seeds {
        let cfg = gen_seq_gap_scenario(seed, &p);
        let a = run_to_quiescence(&cfg).map_err(|e| e.to_string())?.to_jsonl();
        let b = run_to_quiescence(&cfg).map_err(|e| e.to_string())?.to_jsonl();
        if a != b {
            return Err(format!("seed {seed} diverges"));
        }
    }
    Ok(format!("{} failing seeds replay byte-identically", seeds.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("fault-matrix soundness", fault_matrix_soundness),
        ("atomicity assumption", atomicity_assumption),
        ("oracle equivalence", oracle_equivalence),
        ("duplicate notifications", duplicate_absorption),
        ("read stall", read_stall),
        ("lock semantics", lock_semantics),
        ("cost anchors", cost_anchors),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name:<24} {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<24} {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

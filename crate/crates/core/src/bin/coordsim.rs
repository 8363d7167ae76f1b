use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coordsim::checker::check_trace;
use coordsim::cost::{baseline, baselines, cost_table, Baseline, CostParams, CostRow};
use coordsim::fuzz::{fault_matrix, gen_fault_scenario, gen_scenario, gen_seq_gap_scenario, sweep, FuzzParams};
use coordsim::queue::QueueMode;
use coordsim::sim::{run_with_dump, ScenarioConfig, Trace};

#[derive(Parser)]
#[command(name = "coordsim", version, about = "Serverless coordination simulator, checker and cost model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and check the resulting trace.
    Run {
        scenario: PathBuf,
        /// Write the trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the final storage contents.
        #[arg(long)]
        dump: bool,
    },
    /// Check a recorded trace.
    Check { trace: PathBuf },
    /// Run generated scenarios and report the first failing seed.
    Fuzz {
        #[arg(long, default_value_t = 200)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 4)]
        sessions: usize,
        #[arg(long, default_value_t = 50)]
        ops: usize,
        #[arg(long, value_enum, default_value_t = Faults::Matrix)]
        faults: Faults,
        #[arg(long, value_enum, default_value_t = Mode::AtomicPush)]
        queue_mode: Mode,
        /// Directory for the scenario files of failing seeds.
        #[arg(long)]
        save_failures: Option<PathBuf>,
    },
    /// Price table and break-even points against fixed ensembles.
    Cost {
        /// Payload size in kB.
        #[arg(long, default_value_t = 1.0)]
        size: f64,
        /// Read fractions to tabulate.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.9, 0.95, 0.99, 1.0])]
        read_fraction: Vec<f64>,
        /// Baseline names; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        preset: Vec<String>,
        /// JSON file overriding price parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Faults {
    Matrix,
    None,
    /// Sequence-number queue with a writer crash between push and commit.
    SeqGap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    AtomicPush,
    SequenceNumber,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, trace, dump } => run(&scenario, trace.as_deref(), dump),
        Cmd::Check { trace } => check(&trace),
        Cmd::Fuzz {
            seeds,
            first_seed,
            sessions,
            ops,
            faults,
            queue_mode,
            save_failures,
        } => {
            let params = FuzzParams {
                sessions,
                ops,
                queue_mode: match queue_mode {
                    Mode::AtomicPush => QueueMode::AtomicPush,
                    Mode::SequenceNumber => QueueMode::SequenceNumber,
                },
                ..Default::default()
            };
            fuzz(first_seed..first_seed + seeds, &params, faults, save_failures.as_deref())
        }
        Cmd::Cost {
            size,
            read_fraction,
            preset,
            params,
            csv,
        } => cost(size, &read_fraction, &preset, params.as_deref(), csv.as_deref()),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn run(scenario: &Path, trace_out: Option<&Path>, dump: bool) -> CliResult {
    let text = fs::read_to_string(scenario).map_err(|e| format!("{}: {e}", scenario.display()))?;
    let cfg = ScenarioConfig::from_json(&text)?;
    let (trace, state) = run_with_dump(&cfg)?;
    if let Some(p) = trace_out {
        trace.write_jsonl(io::BufWriter::new(fs::File::create(p)?))?;
    }
    if dump {
        println!("{state}");
    }
    let report = check_trace(&trace)?;
    println!("{} events", trace.len());
    print!("{report}");
    Ok(report.passed())
}

fn check(path: &Path) -> CliResult {
    let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(f))?;
    let report = check_trace(&trace)?;
    print!("{report}");
    Ok(report.passed())
}

fn fuzz(seeds: std::ops::Range<u64>, p: &FuzzParams, faults: Faults, save: Option<&Path>) -> CliResult {
    let mut jobs: Vec<(String, Box<dyn Fn(u64) -> ScenarioConfig + Sync>)> = vec![];
    match faults {
        Faults::None => {
            let p = p.clone();
            jobs.push(("none".into(), Box::new(move |s| gen_scenario(s, &p))));
        }
        Faults::SeqGap => {
            let p = p.clone();
            jobs.push(("seq-gap".into(), Box::new(move |s| gen_seq_gap_scenario(s, &p))));
        }
        Faults::Matrix => {
            for point in fault_matrix() {
                let p = p.clone();
                jobs.push((point.to_string(), Box::new(move |s| gen_fault_scenario(s, &p, point))));
            }
        }
    }
    let mut ok = true;
    for (name, make) in &jobs {
        let sum = sweep(seeds.clone(), make);
        if sum.passed() {
            println!("{name:<36} {} seeds PASS", sum.runs);
            continue;
        }
        ok = false;
        println!(
            "{name:<36} {} seeds FAIL  {} failing, {} errors",
            sum.runs,
            sum.failures.len(),
            sum.errors.len()
        );
        for (seed, e) in sum.errors.iter().take(3) {
            println!("  seed {seed}: error: {e}");
        }
        if let Some((seed, report)) = &sum.first_failure {
            println!("  counterexample seed {seed}");
            for line in report.to_string().lines() {
                println!("    {line}");
            }
        }
        if let Some(dir) = save {
            fs::create_dir_all(dir)?;
            for &seed in sum.failures.iter().chain(sum.errors.iter().map(|(s, _)| s)) {
                let file = dir.join(format!("{}-seed{seed}.json", name.replace(':', "-")));
                fs::write(&file, make(seed).to_json())?;
            }
            println!("  scenarios written to {}", dir.display());
        }
    }
    Ok(ok)
}

fn cost(size: f64, fractions: &[f64], presets: &[String], params: Option<&Path>, csv: Option<&Path>) -> CliResult {
    let params: CostParams = match params {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => CostParams::default(),
    };
    let chosen: Vec<Baseline> = if presets.is_empty() {
        baselines()
    } else {
        presets
            .iter()
            .map(|n| baseline(n).ok_or_else(|| format!("unknown preset `{n}`")))
            .collect::<Result<_, _>>()?
    };
    let rows = cost_table(&params, &chosen, fractions, size)?;
    println!("read:  ${:.3e} per request", params.cost_read(size)?);
    println!("write: ${:.3e} per request", params.cost_write(size)?);
    println!();
    println!("{:<24} {:>9} {:>6} {:>12} {:>14}", "baseline", "$/day", "reads", "$/request", "break-even/day");
    for r in &rows {
        println!(
            "{:<24} {:>9.3} {:>6.2} {:>12.3e} {:>14.0}",
            r.baseline, r.daily_cost, r.read_fraction, r.cost_per_request, r.break_even
        );
    }
    if let Some(p) = csv {
        write_csv(&rows, fs::File::create(p)?)?;
    }
    Ok(true)
}

fn write_csv(rows: &[CostRow], w: impl Write) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    writeln!(w, "baseline,daily_cost,read_fraction,size_kb,cost_per_request,break_even")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.baseline, r.daily_cost, r.read_fraction, r.size_kb, r.cost_per_request, r.break_even
        )?;
    }
    w.flush()
}

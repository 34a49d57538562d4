use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leader_sim::adversary::{AdversaryConfig, DelaySpec, WakeSpec};
use leader_sim::harness::{
    run_sweep, run_trial, run_trial_traced, verify_trace, HarnessError, SweepSpec, TrialReport, TrialSpec,
};
use leader_sim::protocol::ProtocolKind;

#[derive(Parser)]
#[command(name = "leader-sim", version, about = "Randomized leader election simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print its report as JSON.
    Run(RunArgs),
    /// Run a sweep described by a JSON config and write CSVs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a JSON-lines trace against the protocol invariants.
    Verify {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    protocol: ProtocolKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Delay policy: unit, uniform-random, epsilon-rush:EPS, slow-high-rank[:EPS].
    #[arg(long, default_value = "unit")]
    adversary: DelaySpec,
    /// Wake schedule: all-at-zero, single, staggered:K,GAP, random-subset:P.
    #[arg(long, default_value = "all-at-zero")]
    wake: WakeSpec,
    #[arg(long, default_value_t = 0)]
    adversary_seed: u64,
    #[arg(long)]
    unique_ids: bool,
    #[arg(long)]
    event_budget: Option<u64>,
    /// Write the JSON-lines trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<TrialReport, HarnessError> {
    let spec = TrialSpec {
        protocol: args.protocol,
        n: args.n,
        seed: args.seed,
        unique_ids: args.unique_ids,
        adversary: AdversaryConfig { wake: args.wake, delay: args.adversary, adversary_seed: args.adversary_seed },
        event_budget: args.event_budget,
    };
    match &args.trace {
        Some(path) => {
            let file = File::create(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            run_trial_traced(&spec, file)
        }
        None => run_trial(&spec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args).map(|report| {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            for v in &report.invariant_violations {
                eprintln!("violation: {v}");
            }
            report.invariant_violations.is_empty()
        }),
        Command::Sweep { config, out } => SweepSpec::load(&config).and_then(|spec| {
            let Some(out) = out.or_else(|| spec.out.clone()) else {
                return Err(HarnessError::Invalid("no output directory: pass --out or set `out`".into()));
            };
            let summary = run_sweep(&spec, &out)?;
            println!(
                "{:>6} {:>7} {:>12} {:>10} {:>12} {:>8} {:>10}",
                "n", "trials", "msgs/n", "p95", "time/log²n", "success", "attr.viol"
            );
            for r in &summary.rows {
                println!(
                    "{:>6} {:>7} {:>12.3} {:>10.3} {:>12.4} {:>8.4} {:>10.4}",
                    r.n,
                    r.trials,
                    r.messages_per_n,
                    r.p95_messages_per_n,
                    r.time_per_log_sq_n,
                    r.success_rate,
                    r.attrition_violation_rate
                );
            }
            println!("wrote {}", out.display());
            Ok(summary.invariant_violations() == 0)
        }),
        Command::Verify { trace } => match verify_trace(&trace) {
            Ok(report) => {
                for v in &report.violations {
                    println!("{v}");
                }
                println!(
                    "{} records, {} violations, hash {:016x}",
                    report.records,
                    report.violations.len(),
                    report.hash
                );
                Ok(report.violations.is_empty())
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

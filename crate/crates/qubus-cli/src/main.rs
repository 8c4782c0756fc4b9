use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod scenario;
mod sweep;

use scenario::CliError;

#[derive(Parser)]
#[command(name = "qubus", version, about = "Qubit-bus simulator front end")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario file and report analytic and sampled results.
    Run {
        file: PathBuf,
        /// Write report.json (and trajectory.json when available) here
        /// instead of printing the report to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a parameter sweep and print a CSV table.
    Sweep {
        file: PathBuf,
        /// Worker threads; the output is identical for any value.
        #[arg(long)]
        jobs: Option<usize>,
        /// Write sweep.csv here instead of printing to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in self-check suites.
    Validate {
        /// Only run suites whose name contains this substring.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Re-derive a frozen gate sequence and print it.
    SearchSequence {
        target: SearchTarget,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchTarget {
    /// Controlled phase gate from rotations and unconditional displacements.
    Fig11,
    /// Parity readout from rotations and conditional displacements.
    Fig13,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(CliError::Input(msg)) => {
            eprintln!("input error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            3
        }
    };
    ExitCode::from(code)
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_out(dir: &PathBuf, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run { file, out } => {
            let sc = scenario::parse_scenario(&read_file(&file)?)?;
            let exec = scenario::execute(&sc)?;
            let report = pretty(&exec.report);
            match out {
                Some(dir) => {
                    write_out(&dir, "report.json", &report)?;
                    if let Some(t) = &exec.trajectory {
                        write_out(&dir, "trajectory.json", &pretty(t))?;
                    }
                }
                None => print!("{report}"),
            }
            Ok(0)
        }
        Command::Sweep { file, jobs, out } => {
            let spec = sweep::parse_sweep(&read_file(&file)?)?;
            let csv = sweep::run_sweep(&spec, jobs)?;
            match out {
                Some(dir) => write_out(&dir, "sweep.csv", &csv)?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
        Command::Validate { filter } => {
            let results = qubus::checks::run_checks(filter.as_deref())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{}", pretty(&results));
            let mut failed = 0usize;
            for r in &results {
                eprintln!(
                    "{:<24} {}  worst {:.3e}  {}",
                    r.suite,
                    if r.passed { "pass" } else { "FAIL" },
                    r.worst,
                    r.detail
                );
                if !r.passed {
                    failed += 1;
                }
            }
            eprintln!("{} suite(s), {} failed", results.len(), failed);
            Ok(if failed > 0 { 1 } else { 0 })
        }
        Command::SearchSequence { target } => {
            let seq = match target {
                SearchTarget::Fig11 => qubus::protocols::search_rotation_only_sequence(),
                SearchTarget::Fig13 => qubus::protocols::search_rotation_displacement_sequence(),
            }
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{}", pretty(&seq));
            Ok(0)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdmec::{run_experiment, Error, ExperimentSpec, SolveInput};

#[derive(Parser)]
#[command(name = "fdmec", version, about = "Energy minimization for full-duplex NOMA edge computing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write its data files.
    Run {
        /// Experiment spec (JSON).
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
    /// Solve one instance and print its report as JSON.
    Solve {
        /// Instance description (JSON).
        scenario: PathBuf,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn run(spec: &Path, out: &Path, workers: usize) -> Result<(), Error> {
    let spec = ExperimentSpec::from_json_str(&read(spec)?)?;
    let counts = run_experiment(&spec, out, workers)?;
    eprintln!(
        "{} jobs: {} solved, {} infeasible or failed, {} paired seeds at the sparsest point",
        counts.jobs, counts.solved, counts.failed, counts.paired_seeds
    );
    Ok(())
}

fn solve(path: &Path) -> ExitCode {
    let input: SolveInput = match read(path).and_then(|text| serde_json::from_str(&text).map_err(Error::from)) {
        Ok(input) => input,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match input.solve() {
        Ok(report) => {
            println!("{}", report.to_json());
            ExitCode::SUCCESS
        }
        Err(e) if e.is_infeasible() => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, out, workers } => match run(&spec, &out, workers) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Solve { scenario } => solve(&scenario),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wedflow_cli::{
    cmd_accept, cmd_solve, cmd_sweep, list_criteria, CliError, RunConfig, EXIT_ACCEPTANCE, EXIT_IO,
    EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "wedflow",
    version,
    about = "Elliptic-in-time variational solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem; writes trajectory.csv and
    /// diagnostics.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured sweep; writes sweep.csv and summary.txt.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the acceptance suite; writes its CSV artifacts.
    Accept {
        /// Print the criteria without running them.
        #[arg(long)]
        list: bool,
        #[arg(long, required_unless_present = "list")]
        config: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RunConfig::parse(&text)
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("WEDFLOW_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                wedflow::parallel::configure_threads(n);
            }
            _ => {
                eprintln!("WEDFLOW_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(EXIT_IO as u8);
            }
        }
    }
    let cli = Cli::parse();
    let outcome: Result<i32, CliError> = match cli.command {
        Command::Solve { config } => load(&config).and_then(|c| cmd_solve(&c)).map(|_| EXIT_OK),
        Command::Sweep { config } => load(&config).and_then(|c| cmd_sweep(&c)).map(|_| EXIT_OK),
        Command::Accept { list, config } => {
            if list {
                list_criteria();
                Ok(EXIT_OK)
            } else {
                let path = config.expect("clap enforces --config unless --list");
                load(&path).and_then(|c| cmd_accept(&c)).map(|passed| {
                    if passed {
                        EXIT_OK
                    } else {
                        EXIT_ACCEPTANCE
                    }
                })
            }
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fisher_mala::cli;

/// Fisher-adaptive MALA experiments.
///
/// Outputs go under $FISHER_MALA_OUT (default ./runs). Exit status is 0 on
/// success, 1 on runtime failures and 2 on configuration errors.
#[derive(Parser)]
#[command(name = "fisher-mala", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Recompute ACF/ESS/ESJD for a stored chain.
    Diagnose {
        chain: PathBuf,
        #[arg(long, default_value_t = 500)]
        lag: usize,
        /// Also export the collection phase as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Aggregate run artifacts into one row per sampler.
    Table {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Fisher-estimate convergence-rate experiment.
    Rate { config: PathBuf },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match args.command {
        Command::Run { config } => {
            cli::cmd_run(&config).map(|dir| eprintln!("wrote {}", dir.display()))
        }
        Command::Diagnose { chain, lag, csv } => cli::cmd_diagnose(&chain, lag, csv).map(|_| ()),
        Command::Table { artifacts, out } => cli::cmd_table(&artifacts, out.as_deref()).map(|_| ()),
        Command::Rate { config } => {
            cli::cmd_rate(&config).map(|dir| eprintln!("wrote {}", dir.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mixvar", version, about = "Mixed-smoothness variational experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the quasiconvex envelope on a lattice into a `.qft` file.
    Envelope {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the auxiliary function and fit mean coercivity constants.
    Coerce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        q: Option<f64>,
        /// Equispaced moment levels as `start:stop:count`.
        #[arg(long)]
        t: Option<String>,
    },
    /// Minimize the energy over a Dirichlet class.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare refined minimizations of F against the tabulated envelope.
    Relax {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale-and-tile measures, moments and Jensen gaps.
    Ym {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config or arguments (exit 2).
    Validation(String),
    /// Numerical failure (exit 3); a manifest has been written.
    Numerical(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Envelope { config, out } => commands::envelope(&config, &out),
        Command::Coerce { config, out, q, t } => commands::coerce(&config, &out, q, t.as_deref()),
        Command::Solve { config, out } => commands::solve(&config, &out),
        Command::Relax { config, table, levels, out } => commands::relax(&config, &table, levels, &out),
        Command::Ym { config, out, table } => commands::ym(&config, &out, table.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(1)
        }
    }
}

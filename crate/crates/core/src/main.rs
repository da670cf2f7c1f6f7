use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracphase::simcli::{cmd_certify, cmd_simulate, cmd_sweep, CertifyOptions, EXIT_INVALID};

#[derive(Parser)]
#[command(name = "fracphase", version, about = "Time-fractional phase-field runs and kernel certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one JSON config and write snapshots, energy.csv, report.json and a manifest.
    Simulate {
        config: PathBuf,
        /// Override `output.directory`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Certify a kernel (abel, kappa-weighted, kappa-energy) or a matrix file.
    Certify {
        kernel: String,
        /// Comma-separated sample points.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        points: Option<Vec<f64>>,
        /// Draw this many random points instead.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// beta | power
        #[arg(long, default_value = "beta")]
        weight: String,
        /// Final time for kappa-energy.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// Run the cartesian product of a sweep config; FRACPHASE_THREADS caps workers.
    Sweep { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors, which is reserved for blow-up
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID as u8 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Simulate { config, output } => cmd_simulate(&config, output.as_deref()),
        Command::Certify {
            kernel,
            points,
            random,
            seed,
            alpha,
            weight,
            t,
        } => cmd_certify(&CertifyOptions {
            target: kernel,
            points,
            random,
            seed,
            alpha,
            weight,
            t,
        }),
        Command::Sweep { config } => cmd_sweep(&config),
    };
    ExitCode::from(code as u8)
}

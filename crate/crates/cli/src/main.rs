use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taf_cli::{read_config, runner, CliError};

/// Spectral solver and diagnostics for the cross-diffusion kinetic model.
///
/// Relative output directories resolve against $TAF_OUTPUT_ROOT (default: current directory).
/// Exit codes: 0 ok, 1 I/O failure, 2 configuration error, 3 numerical abort.
#[derive(Parser)]
#[command(name = "taf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scenario.
    Run { config: PathBuf },
    /// Evolve the configured state and its perturbation; write the pair table.
    Uniqueness { config: PathBuf },
    /// Space-time Lq norm of the heat-kernel gradient on a log time grid.
    KernelTable {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        tmax: f64,
        #[arg(long, default_value_t = 0.005)]
        tmin: f64,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Summarize a checkpoint file.
    Inspect { checkpoint: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let config = read_config(&config)?;
            let out = runner::run_scenario(&config, &runner::output_root())?;
            println!(
                "{}: {} steps (dt = {:e}) to t = {}; output in {}",
                config.scenario.name(),
                out.summary.steps,
                out.summary.dt,
                out.summary.final_state.time(),
                out.dir.display()
            );
        }
        Command::Uniqueness { config } => {
            let config = read_config(&config)?;
            let dir = runner::output_dir(&config, &runner::output_root());
            let summary = runner::write_pair(&config, &dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::KernelTable { q, tmax, tmin, points } => {
            print!("{}", runner::kernel_table_text(q, tmin, tmax, points)?);
        }
        Command::Inspect { checkpoint } => print!("{}", runner::inspect(&checkpoint)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("taf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

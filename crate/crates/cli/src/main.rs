use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ibmls_core::config::{parse_config, RunConfig};
use ibmls_core::{driver, Error, Result};

#[derive(Parser)]
#[command(name = "ibmls", version, about = "One-sided immersed boundary flow solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case and write fields, time series and a report.
    Run { config: PathBuf },
    /// Dump per-marker W, H, L, psi and psi_m at t = 0.
    Weights { config: PathBuf },
    /// Run a Taylor-Green refinement study and fit convergence orders.
    Convergence { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("IBMLS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("IBMLS_THREADS must be a non-negative integer, got \"{v}\"")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn execute(cmd: &Command) -> Result<()> {
    configure_threads()?;
    match cmd {
        Command::Run { config } => {
            let cfg = load(config)?;
            let r = driver::run(&cfg)?;
            println!("{}: {} steps, t = {}", cfg.params.kind.name(), r.steps, r.t);
        }
        Command::Weights { config } => {
            let cfg = load(config)?;
            let path = driver::weights(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Convergence { config } => {
            let cfg = load(config)?;
            let norms = driver::convergence(&cfg)?;
            for n in norms {
                println!("h = {}  L2_u = {:e}  L2_p = {:e}", n.h, n.l2_u, n.l2_p);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ibmls: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

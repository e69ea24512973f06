use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use coarselat::{resolve_threads, run, sweep, Command, RunConfig, RunError, EXIT_INVARIANT};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Forward,
    Backward,
    Construct,
    Kernel,
    Sweep,
    Analyze,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Forward => Command::Forward,
            Cmd::Backward => Command::Backward,
            Cmd::Construct => Command::Construct,
            Cmd::Kernel => Command::Kernel,
            Cmd::Sweep => Command::Sweep,
            Cmd::Analyze => Command::Analyze,
        }
    }
}

/// Lattice coarsening simulations and back-in-time constructions.
#[derive(Debug, Parser)]
#[command(name = "coarselat", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for random data and construction probes.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<i32, RunError> {
    let mut config = RunConfig::load(&cli.config)?;
    let command = Command::from(cli.command);
    if config.command != command {
        // The CLI command wins; a sweep keeps the config's per-value command.
        if command == Command::Sweep && config.sweep_command.is_none() {
            config.sweep_command = Some(config.command);
        }
        config.command = command;
    }
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let dir = cli.output.clone().unwrap_or_else(|| config.output_dir.clone());
    config.output_dir = dir.clone();

    if command == Command::Sweep {
        let threads = resolve_threads(&config)?;
        let summary = sweep(&config, &dir, threads)?;
        for e in &summary.entries {
            match &e.error {
                None => eprintln!("{}: ok", e.dir),
                Some(err) => eprintln!("{}: exit {} ({err})", e.dir, e.exit_code),
            }
        }
        return Ok(summary.exit_code());
    }
    let manifest = run(&config, &dir)?;
    for c in manifest.failed_checks() {
        eprintln!("check {} failed: {}", c.name, c.detail);
    }
    Ok(if manifest.passed { 0 } else { EXIT_INVARIANT })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("coarselat: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

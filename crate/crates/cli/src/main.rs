use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use nlwave_cli::{execute, parse_config, Command, ExitStatus, Options};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Solve,
    ConvergeTime,
    ConvergeSpace,
    VerifyOrlicz,
    VerifyNfun,
    ProbeUnique,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Solve => Command::Solve,
            Cmd::ConvergeTime => Command::ConvergeTime,
            Cmd::ConvergeSpace => Command::ConvergeSpace,
            Cmd::VerifyOrlicz => Command::VerifyOrlicz,
            Cmd::VerifyNfun => Command::VerifyNfun,
            Cmd::ProbeUnique => Command::ProbeUnique,
        }
    }
}

/// Backward Euler / Galerkin solver for damped nonlinear wave equations.
#[derive(Debug, Parser)]
#[command(name = "nlwave", version)]
struct Args {
    command: Cmd,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config; default `nlwave-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for all random sampling (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit(ExitStatus::ConfigError) } else { ExitCode::SUCCESS };
        }
    };
    let command = Command::from(args.command);
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return exit(ExitStatus::ConfigError);
        }
    };
    let config = match parse_config(&text).and_then(|c| c.require(command).map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: invalid config", args.config.display());
            for issue in &e.issues {
                eprintln!("  {issue}");
            }
            return exit(ExitStatus::ConfigError);
        }
    };
    let opts = Options {
        out: args.out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("nlwave-out")),
        seed: args.seed.unwrap_or(config.seed),
    };
    match execute(command, &config, &opts) {
        Ok(outcome) => {
            print!("{}", outcome.summary_text(command));
            exit(outcome.status())
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit(ExitStatus::SolverFailure)
        }
    }
}

mod args;
mod commands;
mod inputs;
mod output;

use std::process::ExitCode;

use clap::Parser;
use fleetmon_core::{Error, ErrorClass};

use args::{Cli, Command};
use commands::Globals;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads {n}: {e}")))?;
    }
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
        out_dir: cli.out_dir,
    };
    let (name, result) = match &cli.command {
        Command::Simulate(a) => ("simulate", commands::simulate(&g, a)),
        Command::Ingest(a) => ("ingest", commands::ingest(&g, a)),
        Command::Filter(a) => ("filter", commands::filter(&g, a)),
        Command::Train(a) => ("train", commands::train(&g, a)),
        Command::Pretrain(a) => ("pretrain", commands::pretrain(&g, a)),
        Command::Finetune(a) => ("finetune", commands::finetune_cmd(&g, a)),
        Command::Evaluate(a) => ("evaluate", commands::evaluate(&g, a)),
        Command::Monitor(a) => ("monitor", commands::monitor_cmd(&g, a)),
        Command::Sweep(a) => ("sweep", commands::sweep(&g, a)),
    };
    result.map_err(|e| e.context(name))
}

/// 2 for configuration errors, 3 for data errors, 4 for numeric failures.
/// Failures outside the library (such as writing outputs) count as data errors.
fn exit_code(e: &anyhow::Error) -> u8 {
    let class = e
        .chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map(Error::class);
    match class {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Numeric) => 4,
        Some(ErrorClass::Data) | None => 3,
    }
}

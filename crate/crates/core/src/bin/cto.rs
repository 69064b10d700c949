//! `cto synth|train|eval|predict|gradcheck|flops|ablate --config <path>`
//!
//! Exit status: 0 ok, 1 usage or configuration, 2 data, 3 numeric failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use cto_core::config::RunConfig;
use cto_core::error::{CtoError, Result};
use cto_core::harness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    Synth,
    Train,
    Eval,
    Predict,
    Gradcheck,
    Flops,
    Ablate,
}

#[derive(Debug, Parser)]
#[command(name = "cto", version, about = "Boundary-guided dual-stream segmentation toolkit")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `section.key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint for `eval` and `predict`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Single worker thread for bit-reproducible runs.
    #[arg(long)]
    deterministic: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

/// Worker count: 1 when deterministic, else `CTO_THREADS` when set.
fn configure_threads(deterministic: bool) -> Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("CTO_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                CtoError::Usage(format!("CTO_THREADS must be a positive integer, got `{v}`"))
            })?),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CtoError::Usage(format!("cannot configure {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads(cli.deterministic)?;
    let cfg = RunConfig::load(&cli.config)?;
    let progress = !cli.quiet;
    let report = match cli.command {
        Command::Synth => harness::cmd_synth(&cfg)?,
        Command::Train => harness::cmd_train(&cfg, progress)?,
        Command::Eval => harness::cmd_eval(&cfg, cli.checkpoint.as_deref())?,
        Command::Predict => harness::cmd_predict(&cfg, cli.checkpoint.as_deref())?,
        Command::Gradcheck => harness::cmd_gradcheck(&cfg)?,
        Command::Flops => {
            let r = harness::flops_report(&cfg.model)?;
            emit(&harness::render_flops(&r));
            return Ok(());
        }
        Command::Ablate => {
            let report = harness::cmd_ablate(&cfg, progress)?;
            let table = report["table"].as_str().unwrap_or_default();
            let text = std::fs::read_to_string(table).map_err(|e| CtoError::io(table, e))?;
            emit(&text);
            return Ok(());
        }
    };
    emit(&format!("{}\n", serde_json::to_string_pretty(&report).expect("json value")));
    Ok(())
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cto: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Batch front end for the stop-loss pricing engine.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 numerical error, 4 I/O error.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Document;
use crate::config::{BlockMode, CheckName, EsMode, Format, RunConfig};
use crate::error::CliError;
use stoploss::risk::Threshold;

#[derive(Debug, Parser)]
#[command(name = "stoploss", version, about = "Stop-loss pricing on Cox-process loss models")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `numerics.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price the configured contract with the integration-by-parts estimator.
    Price,
    /// Expected shortfall of L_T.
    Es {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<EsMode>,
        /// Condition on `L_T <= beta` instead of `L_T < beta`.
        #[arg(long)]
        inclusive: bool,
    },
    /// Empirical CDF of L_T as `x,cdf` rows.
    Block {
        #[arg(long, value_enum)]
        mode: Option<BlockMode>,
    },
    /// Run the statistical check battery.
    Validate {
        /// Comma-separated subset of checks.
        #[arg(long, value_enum, value_delimiter = ',', num_args = 0..)]
        checks: Option<Vec<CheckName>>,
        /// Use the broken mark re-indexing in the law check.
        #[arg(long, hide = true)]
        mutate_reindexing: bool,
    },
    /// Time one pricing run.
    Bench,
}

/// Runs the command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stoploss: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("missing --config <path>".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.numerics.seed = seed;
    }
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let format = cli.format.unwrap_or(cfg.output.format);
    let output = cli
        .output
        .clone()
        .or_else(|| cfg.output.path.as_ref().map(PathBuf::from));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))?;
    let mut mutate = false;
    match &cli.command {
        Command::Es { alpha, mode, inclusive } => {
            if alpha.is_some() {
                cfg.es.alpha = *alpha;
            }
            if let Some(m) = mode {
                cfg.es.mode = *m;
            }
            if *inclusive {
                cfg.es.threshold = Threshold::Inclusive;
            }
        }
        Command::Block { mode: Some(m) } => cfg.block.mode = *m,
        Command::Validate {
            checks,
            mutate_reindexing,
        } => {
            if let Some(c) = checks {
                cfg.validate.checks = c.clone();
            }
            mutate = *mutate_reindexing;
        }
        _ => {}
    }

    let doc = pool.install(|| match &cli.command {
        Command::Price => commands::price(&cfg),
        Command::Es { .. } => commands::es(&cfg),
        Command::Block { .. } => commands::block(&cfg),
        Command::Validate { .. } => commands::validate(&cfg, mutate),
        Command::Bench => commands::bench(&cfg, threads),
    })?;
    write_document(&doc, &cfg, format, output.as_ref())?;
    match doc.passed {
        Some(false) => Err(CliError::Validation("one or more checks failed; see the report".into())),
        _ => Ok(()),
    }
}

fn write_document(doc: &Document, cfg: &RunConfig, format: Format, output: Option<&PathBuf>) -> Result<(), CliError> {
    let text = match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&doc.json).map_err(|e| CliError::Numeric(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Csv => doc.csv.clone(),
    };
    let io_err = |p: &PathBuf, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    match output {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| io_err(p, e))?;
            if format == Format::Csv {
                // CSV has no room for the echo; it goes next to the file.
                let meta = serde_json::json!({ "seed": cfg.numerics.seed, "config": cfg });
                let mut side = p.clone().into_os_string();
                side.push(".meta.json");
                let side = PathBuf::from(side);
                let body = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Numeric(e.to_string()))? + "\n";
                std::fs::write(&side, body).map_err(|e| io_err(&side, e))?;
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

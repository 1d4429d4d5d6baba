//! Experiment runner and replay tool.
//!
//! `run` executes a (protocol x policy x seed) matrix from a TOML experiment
//! file, verifies every cell offline, and writes a CSV table, an aggregate
//! summary, and (for failing cells by default) replayable event logs.
//! `replay` re-executes a stored log and diffs it line by line. Exit codes:
//! 0 clean, 1 usage or configuration error, 2 verification failure
//! (an oracle FAIL, an errored cell, or a replay divergence).

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use aisnap::runner::{
    render_log, replay_log, replay_log_with, run_cells, summarize, sweep_csv_header, CellResult,
    ReplayError, RunConfig,
};
use aisnap::verify_run;
use aisnap::workloads::Workload;

use config::{parse_seed_override, ExperimentConfig, LogPolicy};

#[derive(Parser)]
#[command(
    name = "aisnap",
    version,
    about = "Deterministic experiment matrix runner for asynchronous snapshot protocols"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment matrix from a config file.
    Run(RunArgs),
    /// Re-execute a stored event log and compare it line by line.
    Replay(ReplayArgs),
    /// Print the resolved matrix cells without running them.
    ExportMatrix(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML file.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override: COUNT, LO..HI, or A,B,C.
    #[arg(long)]
    seeds: Option<String>,
    /// Keep only these protocols from the matrix (comma list).
    #[arg(long)]
    protocols: Option<String>,
    /// Keep only these policies from the matrix (comma list of policy strings).
    #[arg(long)]
    policies: Option<String>,
    /// Force protocol/transport pairs outside the compatibility matrix.
    #[arg(long)]
    allow_incompatible: bool,
    /// Print one CSV line per cell instead of failures only.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Event log produced by `run`.
    log: PathBuf,
    /// Replay under this configuration (JSON, the log's `#config` payload
    /// format) instead of the embedded one. Refused unless it hashes to the
    /// value the log was produced with.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the regenerated cell report (CSV row plus oracle lines) here.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Print the report to stdout as well.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Experiment TOML file.
    #[arg(short, long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(args) => run_cmd(args),
        Cmd::Replay(args) => replay_cmd(args),
        Cmd::ExportMatrix(args) => export_matrix_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_experiment(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read experiment file {}", path.display()))?;
    let exp: ExperimentConfig = toml::from_str(&text)
        .with_context(|| format!("cannot parse experiment file {}", path.display()))?;
    Ok(exp)
}

/// Restrict `list` to the comma-separated names in `keep`; unknown names are
/// an error so a typo cannot silently run an empty matrix.
fn filter_list(list: &[String], keep: &str, what: &str) -> Result<Vec<String>> {
    let want: Vec<&str> = keep.split(',').map(str::trim).collect();
    for w in &want {
        if !list.iter().any(|x| x == w) {
            anyhow::bail!("{what} filter `{w}` does not appear in the experiment matrix");
        }
    }
    Ok(list.iter().filter(|x| want.contains(&x.as_str())).cloned().collect())
}

fn eta_suffix(cfg: &RunConfig) -> String {
    cfg.policy.eta().map(|e| format!("-eta{e}")).unwrap_or_default()
}

fn cell_stem(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-{}{}-s{}",
        cfg.workload.short_name(),
        cfg.protocol.name(),
        cfg.policy.name(),
        eta_suffix(cfg),
        cfg.seed
    )
}

/// One cell's report: its CSV row plus the oracle check lines. A pure
/// function of the run outcome, so `run` and `replay` emit identical bytes
/// for the same cell.
fn report_text(cell: &CellResult) -> String {
    let mut s = String::new();
    s.push_str(sweep_csv_header());
    s.push('\n');
    s.push_str(&cell.csv_row());
    s.push('\n');
    match &cell.report {
        Some(r) => s.push_str(&r.to_text()),
        None => s.push_str("verification: not run\n"),
    }
    s
}

fn run_cmd(args: &RunArgs) -> Result<ExitCode> {
    let mut exp = load_experiment(&args.config)?;
    if let Some(keep) = &args.protocols {
        exp.matrix.protocols = filter_list(&exp.matrix.protocols, keep, "protocol")?;
    }
    if let Some(keep) = &args.policies {
        exp.matrix.policies = filter_list(&exp.matrix.policies, keep, "policy")?;
    }
    if let Some(spec) = &args.seeds {
        exp.matrix.seeds = Some(parse_seed_override(spec).map_err(anyhow::Error::msg)?);
        exp.matrix.seed_count = None;
    }
    if args.allow_incompatible {
        exp.run.allow_incompatible = true;
    }
    let log_policy = exp.output.log_policy().map_err(anyhow::Error::msg)?;
    let cells = exp.cells().map_err(anyhow::Error::msg)?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&exp.output.dir));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let results = run_cells(&cells);

    let mut csv = String::from(sweep_csv_header());
    csv.push('\n');
    for r in &results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(out_dir.join(&exp.output.csv), &csv)?;

    let mut sum = String::new();
    for s in summarize(&results) {
        sum.push_str(&s.line());
        sum.push('\n');
    }
    fs::write(out_dir.join(&exp.output.summary), &sum)?;

    for r in &results {
        let keep = match log_policy {
            LogPolicy::All => true,
            LogPolicy::Failures => !r.oracle_ok(),
            LogPolicy::None => false,
        };
        if !keep {
            continue;
        }
        if let Ok(outcome) = &r.outcome {
            let stem = cell_stem(&r.cfg);
            fs::write(out_dir.join(format!("{stem}.log")), render_log(&r.cfg, outcome))?;
            fs::write(out_dir.join(format!("{stem}.report.txt")), report_text(r))?;
        }
    }

    let failed: Vec<&CellResult> = results.iter().filter(|r| !r.oracle_ok()).collect();
    if args.verbose {
        for r in &results {
            println!("{}", r.csv_row());
        }
    } else {
        for r in &failed {
            println!("FAIL {}", r.csv_row());
        }
    }
    println!(
        "cells={} ok={} failed={} -> {}",
        results.len(),
        results.len() - failed.len(),
        failed.len(),
        out_dir.display()
    );
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn replay_cmd(args: &ReplayArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.log)
        .with_context(|| format!("cannot read log {}", args.log.display()))?;
    let replayed = match &args.config {
        None => replay_log(&text),
        Some(path) => {
            let cfg_text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            let cfg: RunConfig = serde_json::from_str(cfg_text.trim())
                .with_context(|| format!("cannot parse run config {}", path.display()))?;
            replay_log_with(&text, &cfg)
        }
    };
    let report = match replayed {
        Ok(r) => r,
        Err(e @ ReplayError::HashMismatch { .. }) => {
            eprintln!("{e}");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };

    let divergence = report.divergence.clone();
    let workload = Workload::build(&report.config.workload)?;
    let verification = verify_run(&report.outcome.history, &workload).ok();
    let events = report.outcome.history.events.len();
    let epochs = report.outcome.history.epochs.len();
    let cell =
        CellResult { cfg: report.config, outcome: Ok(report.outcome), report: verification };

    match &divergence {
        None => println!("replay matches the log ({events} events, {epochs} epochs)"),
        Some(d) => {
            println!("replay diverges at line {}:", d.line);
            println!("  logged:   {}", d.logged);
            println!("  replayed: {}", d.replayed);
        }
    }
    if args.verbose {
        print!("{}", report_text(&cell));
    }
    if let Some(path) = &args.report_out {
        fs::write(path, report_text(&cell))
            .with_context(|| format!("cannot write report {}", path.display()))?;
    }
    Ok(if divergence.is_none() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn export_matrix_cmd(args: &ExportArgs) -> Result<ExitCode> {
    let exp = load_experiment(&args.config)?;
    let cells = exp.cells().map_err(anyhow::Error::msg)?;
    println!("workload,protocol,policy,eta,seed");
    for c in &cells {
        println!(
            "{},{},{},{},{}",
            c.workload.short_name(),
            c.protocol.name(),
            c.policy.name(),
            c.policy.eta().map(|e| e.to_string()).unwrap_or_default(),
            c.seed
        );
    }
    eprintln!("cells={}", cells.len());
    Ok(ExitCode::SUCCESS)
}

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use phlab::cli::{self, Config, RunOptions, Subcommand};

/// Numerical experiments on invariant splittings of partially hyperbolic
/// toral maps.
#[derive(Debug, Parser)]
#[command(name = "phlab", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Subcommand,
    /// Flat key = value experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for CSV tables and report.json.
    #[arg(long, default_value = "phlab-out")]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Seed for randomly sampled points (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Treat warnings as failures.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Config::parse(&text).with_context(|| path.display().to_string())?
        }
        None => Config::default(),
    };
    let opts = RunOptions {
        out_dir: args.out.clone(),
        threads: args.threads,
        seed: args.seed,
        strict: args.strict,
    };
    let report = cli::run(args.command, &config, &opts)?;
    for a in &report.results {
        let rel = serde_json::to_value(a.relation).ok();
        let rel = rel.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        println!(
            "{} {}: {:e} {rel} {:e}",
            if a.pass { "PASS" } else { "FAIL" },
            a.name,
            a.value,
            a.tolerance
        );
    }
    for m in &report.measurements {
        println!("INFO {}: {:e}", m.name, m.value);
    }
    for w in &report.warnings {
        println!("WARN {w}");
    }
    println!(
        "{} in {:.2} s, outputs in {}",
        if report.passed() { "passed" } else { "failed" },
        report.runtime_seconds,
        args.out.display()
    );
    Ok(report.passed())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use compsmd_bench::{
    run_concentration, run_experiment, run_lowerbound, table_from_dir, BenchError, ExperimentConfig, RunOptions,
};

/// Composite stochastic mirror descent experiments.
#[derive(Parser)]
#[command(name = "compsmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Replace the configured seeds with this one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver grid and write traces, plot data and summaries.
    Run { config: PathBuf },
    /// Check a configuration without running anything.
    Validate { config: PathBuf },
    /// Print the median-iterations table of a finished run.
    Table { summary_dir: PathBuf },
    /// Lower-bound experiment on the Bernoulli instance.
    Lowerbound { config: PathBuf },
    /// Martingale tail check against the concentration bound.
    Concentration { config: PathBuf },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn save_json<T: serde::Serialize>(out: Option<&PathBuf>, name: &str, value: &T) -> Result<String, BenchError> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        compsmd_bench::output::write_atomic(&dir.join(name), &text)?;
    }
    Ok(text)
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config, cli.seed)?;
            let report = run_experiment(&cfg, &RunOptions { workers: cli.workers, out: cli.out })?;
            print!("{}", compsmd_bench::emit_table(&report.summary).render_text());
            eprintln!("wrote {}", report.manifest.display());
            let failures = report.summary.failures();
            if failures > 0 {
                return Err(BenchError::Numerical(format!("{failures} run(s) failed; see summary.json")));
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config, cli.seed)?;
            let mut checked = Vec::new();
            if cfg.instance.is_some() || cfg.run.is_some() || !cfg.solver.is_empty() {
                let plan = cfg.grid()?;
                checked.push(format!("{} grid cells", plan.cells.len()));
            }
            if cfg.lowerbound.is_some() {
                cfg.lowerbound_section()?;
                checked.push("lowerbound".into());
            }
            if cfg.concentration.is_some() {
                cfg.concentration_section()?;
                checked.push("concentration".into());
            }
            if checked.is_empty() {
                return Err(BenchError::Validation("nothing to run in this config".into()));
            }
            println!("ok: {}", checked.join(", "));
        }
        Command::Table { summary_dir } => {
            print!("{}", table_from_dir(&summary_dir)?.render_text());
        }
        Command::Lowerbound { config } => {
            let cfg = load(&config, cli.seed)?;
            let report = run_lowerbound(&cfg)?;
            println!("{}", save_json(cli.out.as_ref(), "lowerbound.json", &report)?);
        }
        Command::Concentration { config } => {
            let cfg = load(&config, cli.seed)?;
            let reports = run_concentration(&cfg)?;
            println!("{}", save_json(cli.out.as_ref(), "concentration.json", &reports)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

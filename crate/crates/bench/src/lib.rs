//! Experiment harness for `compsmd`: TOML-configured solver grids run in
//! parallel over seeds, with per-run traces, summaries and tables.

pub mod config;
pub mod output;
pub mod runner;

use std::path::{Path, PathBuf};

use compsmd::diagnostics::{concentration_check, lower_bound_experiment, ConcentrationReport, LowerBoundReport};
use serde::Serialize;

pub use config::ExperimentConfig;
pub use output::{emit_table, Summary, Table};
pub use runner::run_grid;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl BenchError {
    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Validation(_) => 2,
            BenchError::Numerical(_) => 3,
            BenchError::Io(_) => 1,
        }
    }
}

impl From<compsmd::Error> for BenchError {
    fn from(e: compsmd::Error) -> Self {
        match e {
            compsmd::Error::Parameter { .. } => BenchError::Validation(e.to_string()),
            _ => BenchError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for BenchError {
    fn from(e: serde_json::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub out_dir: PathBuf,
    pub manifest: PathBuf,
}

/// Validates the whole grid, runs it and writes the artifacts. Nothing is
/// written when validation fails.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport, BenchError> {
    let plan = cfg.grid()?;
    let outcomes = run_grid(&plan, opts.workers)?;
    let summary = output::summarize(cfg, &plan, &outcomes);
    let out_dir = opts.out.clone().unwrap_or_else(|| plan.output.dir.clone());
    let manifest = output::write_artifacts(&out_dir, &plan, &outcomes, &summary)?;
    Ok(RunReport {
        summary,
        out_dir,
        manifest,
    })
}

/// Reads `summary.json` from `dir`, writes `table.csv` next to it and
/// returns the table.
pub fn table_from_dir(dir: &Path) -> Result<Table, BenchError> {
    let summary = output::read_summary(dir)?;
    let table = emit_table(&summary);
    output::write_atomic(&dir.join("table.csv"), &table.render_csv()?)?;
    Ok(table)
}

pub fn run_lowerbound(cfg: &ExperimentConfig) -> Result<LowerBoundReport, BenchError> {
    let lb = cfg.lowerbound_section()?;
    Ok(lower_bound_experiment(lb.solver, lb.mu, lb.q, lb.sigma, lb.epsilon, lb.gamma, lb.trials, lb.seed)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightedConcentration {
    pub weights: config::WeightRule,
    pub report: ConcentrationReport,
}

pub fn run_concentration(cfg: &ExperimentConfig) -> Result<Vec<WeightedConcentration>, BenchError> {
    let (c, noise) = cfg.concentration_section()?;
    c.weights
        .iter()
        .map(|&w| {
            let report = concentration_check(
                noise,
                c.q,
                c.dim,
                c.sigma,
                &w.weights(c.horizon),
                c.radius,
                c.trials,
                c.grid,
                c.seed,
            )?;
            Ok(WeightedConcentration { weights: w, report })
        })
        .collect()
}

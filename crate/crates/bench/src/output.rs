//! Summaries, trace/plot CSV files, tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use compsmd::solvers::RestartPlan;
use serde::{Deserialize, Serialize};

use crate::config::{point_id, ExperimentConfig, GridPlan};
use crate::runner::{schedule_summary, CellOutcome, CertificateStatus, TraceRow};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub degree: f64,
    pub offset: f64,
    pub safety_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub point: String,
    pub d: usize,
    pub l_multiplier: f64,
    pub label: String,
    pub algorithm: String,
    pub seeds: Vec<u64>,
    /// Iterations to the target per seed; `None` when not reached.
    pub iterations: Vec<Option<usize>>,
    /// Quartiles with unreached runs counted as `t_max + 1`.
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// `true` when the median run did not reach the target.
    pub censored: bool,
    pub reached: usize,
    pub schedule: Option<ScheduleInfo>,
    pub restart_plan: Option<RestartPlan>,
    pub baseline_sigma: Option<f64>,
    pub certificate: CertificateStatus,
    pub failures: Vec<SeedFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub t_max: usize,
    pub epsilon: f64,
    pub config: ExperimentConfig,
    /// Experiment constants changed from the published values, and the
    /// unpublished ones that had to be assumed.
    #[serde(default)]
    pub notes: Vec<String>,
    pub cells: Vec<CellSummary>,
}

impl Summary {
    pub fn failures(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }

    pub fn cell(&self, point: &str, label: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.point == point && c.label == label)
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(config: &ExperimentConfig, plan: &GridPlan, outcomes: &[CellOutcome]) -> Summary {
    let t_max = plan.run.t_max;
    let cells = outcomes
        .iter()
        .map(|o| {
            let iterations: Vec<Option<usize>> = o.seeds.iter().map(|s| s.iterations).collect();
            let mut vals: Vec<f64> = iterations
                .iter()
                .map(|i| i.map_or(t_max as f64 + 1.0, |v| v as f64))
                .collect();
            vals.sort_by(f64::total_cmp);
            let median = quantile(&vals, 0.5);
            CellSummary {
                cell: o.cell.id.clone(),
                point: point_id(o.cell.d, o.cell.l_multiplier),
                d: o.cell.d,
                l_multiplier: o.cell.l_multiplier,
                label: o.cell.solver.label.clone(),
                algorithm: serde_json::to_value(o.cell.solver.algorithm)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                seeds: o.seeds.iter().map(|s| s.seed).collect(),
                iterations: iterations.clone(),
                median,
                q1: quantile(&vals, 0.25),
                q3: quantile(&vals, 0.75),
                censored: median > t_max as f64,
                reached: iterations.iter().filter(|i| i.is_some()).count(),
                schedule: schedule_summary(&o.cell).map(|(degree, offset, safety_scale)| ScheduleInfo {
                    degree,
                    offset,
                    safety_scale,
                }),
                restart_plan: o.seeds.first().and_then(|s| s.plan.clone()),
                baseline_sigma: o.seeds.first().and_then(|s| s.baseline_sigma),
                certificate: o
                    .seeds
                    .first()
                    .map_or(CertificateStatus::NotChecked, |s| s.certificate.clone()),
                failures: o
                    .seeds
                    .iter()
                    .filter_map(|s| {
                        s.error.as_ref().map(|e| SeedFailure {
                            seed: s.seed,
                            error: e.clone(),
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    Summary {
        name: plan.name.clone(),
        t_max,
        epsilon: plan.run.epsilon,
        config: config.clone(),
        notes: provenance_notes(plan),
        cells,
    }
}

fn provenance_notes(plan: &GridPlan) -> Vec<String> {
    let inst = &plan.instance;
    let mut notes = Vec::new();
    for (key, value, published) in [
        ("sigma_b", inst.sigma_b, 0.1),
        ("mu", inst.mu, 2.0),
        ("epsilon", plan.run.epsilon, 0.01),
    ] {
        if value != published {
            notes.push(format!("override: {key} = {value} (published value {published})"));
        }
    }
    notes.push(format!("assumed: q = {} (not published)", inst.q));
    notes.push("assumed: R = 2‖x⋆‖_q (not published; enters the declared noise level)".into());
    notes
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Median iteration counts, one row per grid point and one column per
/// solver label.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
}

/// Text form of a cell median: the exact value, or `>t_max` when the
/// median run never reached the target.
pub fn format_median(cell: &CellSummary, t_max: usize) -> String {
    if cell.censored {
        format!(">{t_max}")
    } else {
        format!("{}", cell.median)
    }
}

fn row_label(d: usize, lm: f64, many_d: bool, many_l: bool) -> String {
    let l = if lm == 1.0 { "L".to_string() } else { format!("{lm}L") };
    match (many_d, many_l) {
        (true, true) => format!("d={d}, {l}"),
        (false, true) => l,
        _ => format!("d={d}"),
    }
}

pub fn emit_table(summary: &Summary) -> Table {
    let mut columns: Vec<String> = Vec::new();
    let mut points: Vec<(usize, f64)> = Vec::new();
    for c in &summary.cells {
        if !columns.contains(&c.label) {
            columns.push(c.label.clone());
        }
        if !points.contains(&(c.d, c.l_multiplier)) {
            points.push((c.d, c.l_multiplier));
        }
    }
    let many_d = points.iter().any(|p| p.0 != points[0].0);
    let many_l = points.iter().any(|p| p.1 != points[0].1);
    let rows = points
        .iter()
        .map(|&(d, lm)| {
            let point = point_id(d, lm);
            let vals = columns
                .iter()
                .map(|label| {
                    summary
                        .cell(&point, label)
                        .map_or_else(|| "-".to_string(), |c| format_median(c, summary.t_max))
                })
                .collect();
            (row_label(d, lm, many_d, many_l), vals)
        })
        .collect();
    Table { columns, rows }
}

impl Table {
    pub fn render_text(&self) -> String {
        let mut widths: Vec<usize> = std::iter::once(self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4))
            .chain(self.columns.iter().map(|c| c.len()))
            .collect();
        for (_, vals) in &self.rows {
            for (j, v) in vals.iter().enumerate() {
                widths[j + 1] = widths[j + 1].max(v.len());
            }
        }
        let mut out = String::new();
        let header: Vec<String> = std::iter::once(format!("{:<w$}", "", w = widths[0]))
            .chain(self.columns.iter().enumerate().map(|(j, c)| format!("{:>w$}", c, w = widths[j + 1])))
            .collect();
        out.push_str(header.join("  ").trim_end());
        out.push('\n');
        for (label, vals) in &self.rows {
            let line: Vec<String> = std::iter::once(format!("{:<w$}", label, w = widths[0]))
                .chain(vals.iter().enumerate().map(|(j, v)| format!("{:>w$}", v, w = widths[j + 1])))
                .collect();
            out.push_str(&line.join("  "));
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (label, vals) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(vals.iter().cloned());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| BenchError::Io(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub t: usize,
    /// `log10((Ψ(x) − Ψ*)/(Ψ(x_1) − Ψ*))`.
    pub log_rel_error: f64,
    pub algorithm: String,
    pub seed: u64,
}

/// Long-format rows for one grid point.
pub fn plot_rows(outcomes: &[&CellOutcome], every: usize) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for o in outcomes {
        for s in &o.seeds {
            for r in s.rows.iter().filter(|r| r.t == 1 || r.t % every == 0) {
                let rel = (r.psi_gap / s.v0).max(f64::MIN_POSITIVE);
                rows.push(PlotRow {
                    t: r.t,
                    log_rel_error: rel.log10(),
                    algorithm: o.cell.solver.label.clone(),
                    seed: s.seed,
                });
            }
        }
    }
    rows
}

pub fn write_plotdata(rows: &[PlotRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Io(e.to_string()))
}

pub fn read_plotdata(text: &str) -> Result<Vec<PlotRow>, BenchError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(BenchError::from))
        .collect()
}

pub fn write_trace(rows: &[TraceRow], every: usize) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "psi_gap", "bregman_to_opt", "alpha_t", "gamma_t"])?;
    for r in rows.iter().filter(|r| r.t == 1 || r.t % every == 0) {
        w.write_record([
            r.t.to_string(),
            format!("{:e}", r.psi_gap),
            r.bregman_to_opt.map_or(String::new(), |b| format!("{b:e}")),
            format!("{:e}", r.alpha_t),
            format!("{:e}", r.gamma_t),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Io(e.to_string()))
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRow>, BenchError> {
    #[derive(Deserialize)]
    struct Raw {
        t: usize,
        psi_gap: f64,
        bregman_to_opt: Option<f64>,
        alpha_t: f64,
        gamma_t: f64,
    }
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<Raw>()
        .map(|r| {
            r.map(|r| TraceRow {
                t: r.t,
                psi_gap: r.psi_gap,
                bregman_to_opt: r.bregman_to_opt,
                alpha_t: r.alpha_t,
                gamma_t: r.gamma_t,
            })
            .map_err(BenchError::from)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub generator: String,
    pub cells: usize,
    pub seeds: Vec<u64>,
    pub failures: usize,
    pub files: Vec<ManifestEntry>,
}

fn write_file(dir: &Path, name: &str, body: &str, files: &mut Vec<ManifestEntry>) -> Result<(), BenchError> {
    fs::write(dir.join(name), body)?;
    files.push(ManifestEntry {
        path: name.to_string(),
        bytes: body.len() as u64,
    });
    Ok(())
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), BenchError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes traces, plot data and `summary.json`, then `manifest.json` last
/// (atomically) so a present manifest marks a complete output directory.
pub fn write_artifacts(
    dir: &Path,
    plan: &GridPlan,
    outcomes: &[CellOutcome],
    summary: &Summary,
) -> Result<PathBuf, BenchError> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }
    let mut files = Vec::new();
    let every = plan.run.trace_every;
    if plan.output.traces {
        for o in outcomes {
            for s in &o.seeds {
                let name = format!("trace-{}-{}.csv", o.cell.id, s.seed);
                write_file(dir, &name, &write_trace(&s.rows, every)?, &mut files)?;
            }
        }
    }
    if plan.output.plot {
        let mut by_point: BTreeMap<String, Vec<&CellOutcome>> = BTreeMap::new();
        for o in outcomes {
            by_point.entry(point_id(o.cell.d, o.cell.l_multiplier)).or_default().push(o);
        }
        for (point, group) in by_point {
            let body = write_plotdata(&plot_rows(&group, every))?;
            write_file(dir, &format!("plot-{point}.csv"), &body, &mut files)?;
        }
    }
    let json = serde_json::to_string_pretty(summary)?;
    write_file(dir, "summary.json", &json, &mut files)?;
    let manifest = Manifest {
        name: summary.name.clone(),
        generator: format!("compsmd-bench {}", env!("CARGO_PKG_VERSION")),
        cells: summary.cells.len(),
        seeds: plan.run.seeds.clone(),
        failures: summary.failures(),
        files,
    };
    write_atomic(&manifest_path, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest_path)
}

pub fn read_summary(dir: &Path) -> Result<Summary, BenchError> {
    let text = fs::read_to_string(dir.join("summary.json"))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn plot_and_trace_round_trip() {
        let rows = vec![
            PlotRow {
                t: 1,
                log_rel_error: -0.25,
                algorithm: "ACSMD1".into(),
                seed: 3,
            },
            PlotRow {
                t: 2,
                log_rel_error: -1.0e-17,
                algorithm: "Lan".into(),
                seed: 4,
            },
        ];
        assert_eq!(read_plotdata(&write_plotdata(&rows).unwrap()).unwrap(), rows);

        let trace = vec![TraceRow {
            t: 1,
            psi_gap: 0.1 + 0.2,
            bregman_to_opt: None,
            alpha_t: 3.0,
            gamma_t: 1.0 / 3.0,
        }];
        let text = write_trace(&trace, 1).unwrap();
        assert!(text.starts_with("t,psi_gap,bregman_to_opt,alpha_t,gamma_t\n"));
        assert_eq!(read_trace(&text).unwrap(), trace);
    }
}

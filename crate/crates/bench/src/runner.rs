//! Grid execution: every (cell, seed) pair is an independent task with its
//! own random stream.

use compsmd::diagnostics::{certificate_check, ridge_reference};
use compsmd::oracles::{AdditiveNoiseOracle, GradientOracle, NoiseKind, RidgeInstance, RidgeResponseOracle};
use compsmd::rng::substream;
use compsmd::solvers::{
    acsa_baseline, plan_for_schedule, restart, run, AcsaConfig, Reference, RestartPlan, RunTrace, ScheduleKind,
    TraceOptions,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    Algorithm, AutoRule, CellSpec, GridPlan, InstanceConfig, NoiseModel, PointRule, PointSpec, RestartSpec,
    SigmaRule, SigmaSpec,
};
use crate::BenchError;

const X_STAR_STREAM: u64 = 1 << 40;
const X1_STREAM: u64 = 2 << 40;

/// One row of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub psi_gap: f64,
    pub bregman_to_opt: Option<f64>,
    pub alpha_t: f64,
    pub gamma_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CertificateStatus {
    Ok { min_relative_slack: f64 },
    Violated { violations: usize },
    Unavailable { reason: String },
    NotChecked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// `Ψ(x_1) − Ψ*`.
    pub v0: f64,
    /// First `t` with relative gap `≤ ε`.
    pub iterations: Option<usize>,
    pub rows: Vec<TraceRow>,
    pub certificate: CertificateStatus,
    pub plan: Option<RestartPlan>,
    pub baseline_sigma: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: CellSpec,
    pub seeds: Vec<SeedOutcome>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn draw_point(spec: &PointSpec, d: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = substream(seed, stream + d as u64);
    match spec {
        PointSpec::Values(v) => v.clone(),
        PointSpec::Rule(PointRule::Zeros) => vec![0.0; d],
        PointSpec::Rule(PointRule::Ones) => vec![1.0; d],
        PointSpec::Rule(PointRule::Uniform) => (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        PointSpec::Rule(PointRule::Gaussian) => (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
    }
}

/// The ridge instance and starting point of `seed` in dimension `d`.
pub fn seed_instance(inst: &InstanceConfig, d: usize, seed: u64) -> Result<(RidgeInstance, Vec<f64>), BenchError> {
    let x_star = draw_point(&inst.x_star, d, seed, X_STAR_STREAM);
    let x1 = draw_point(&inst.x1, d, seed, X1_STREAM);
    let ridge = RidgeInstance::new(x_star, inst.sigma_b, inst.mu, inst.q)?;
    Ok((ridge, x1))
}

/// Oracle of the configured noise model.
pub fn make_oracle(noise: NoiseModel, ridge: &RidgeInstance) -> Result<Box<dyn GradientOracle>, BenchError> {
    Ok(match noise {
        NoiseModel::Response => Box::new(RidgeResponseOracle(ridge.clone())),
        NoiseModel::Sample => Box::new(ridge.clone()),
        NoiseModel::Exact => Box::new(AdditiveNoiseOracle::around_ridge(ridge, NoiseKind::Gaussian, 0.0)?),
    })
}

/// Euclidean noise level handed to the baseline.
fn baseline_sigma(spec: SigmaSpec, noise: NoiseModel, ridge: &RidgeInstance, x1: &[f64]) -> f64 {
    match spec {
        SigmaSpec::Value(v) => v,
        SigmaSpec::Rule(SigmaRule::Declared) => ridge.declared_noise_level(ridge.default_radius()),
        SigmaSpec::Rule(SigmaRule::Auto) => match noise {
            NoiseModel::Response => RidgeResponseOracle(ridge.clone()).euclidean_noise_std(),
            NoiseModel::Sample => ridge.noise_second_moment(x1).sqrt(),
            NoiseModel::Exact => 0.0,
        },
    }
}

fn rows_of(trace: &RunTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            t: r.t,
            psi_gap: r.psi_gap.unwrap_or(f64::NAN),
            bregman_to_opt: r.bregman_to_opt,
            alpha_t: r.alpha,
            gamma_t: r.gamma,
        })
        .collect()
}

/// First iteration whose gap is within `epsilon · v0`.
pub fn iterations_to(rows: &[TraceRow], v0: f64, epsilon: f64) -> Option<usize> {
    if v0 <= 0.0 {
        return Some(0);
    }
    rows.iter().find(|r| r.psi_gap <= epsilon * v0).map(|r| r.t)
}

fn run_seed(plan: &GridPlan, cell: &CellSpec, seed: u64, first: bool) -> SeedOutcome {
    let mut out = SeedOutcome {
        seed,
        v0: f64::NAN,
        iterations: None,
        rows: Vec::new(),
        certificate: CertificateStatus::NotChecked,
        plan: None,
        baseline_sigma: None,
        error: None,
    };
    if let Err(e) = run_seed_inner(plan, cell, seed, first, &mut out) {
        out.error = Some(e.to_string());
    }
    out
}

fn run_seed_inner(
    plan: &GridPlan,
    cell: &CellSpec,
    seed: u64,
    first: bool,
    out: &mut SeedOutcome,
) -> Result<(), BenchError> {
    let (ridge, x1) = seed_instance(&plan.instance, cell.d, seed)?;
    let oracle = make_oracle(plan.instance.noise, &ridge)?;
    let h = ridge.regularizer()?;
    let reference: Reference = ridge_reference(&ridge);
    out.v0 = ridge.loss(&x1) + h.evaluate(&x1) - reference.psi_star;
    let t_max = plan.run.t_max;
    let mut rng = substream(seed, fnv1a(&cell.id));
    let check = first && plan.run.certificates && !cell.solver.algorithm.restarted() && cell.schedule.is_some();
    let opts = if check {
        TraceOptions {
            every: 1,
            vectors: true,
            reference: Some(reference.clone()),
        }
    } else {
        TraceOptions::gaps(reference.clone())
    };
    let trace = match (cell.solver.algorithm, &cell.schedule) {
        (Algorithm::Acsa, _) => {
            let sigma = baseline_sigma(cell.solver.sigma, plan.instance.noise, &ridge, &x1);
            out.baseline_sigma = Some(sigma);
            let cfg = AcsaConfig {
                mu: ridge.mu_f(),
                l: cell.params.l,
                sigma,
                v0: out.v0.max(f64::MIN_POSITIVE),
                iterations: t_max,
            };
            acsa_baseline(oracle.as_ref(), &h, &cfg, &x1, &opts, &mut rng)?.trace
        }
        (alg, Some(sched)) if alg.restarted() => {
            let full = match plan.run.restart {
                RestartSpec::Rule(AutoRule::Auto) => {
                    plan_for_schedule(&cell.params, sched, out.v0, plan.run.epsilon * out.v0)?
                }
                RestartSpec::Plan { n, k, t } => RestartPlan::new(n, k, t)?,
            };
            let stages = full.truncated(t_max);
            out.plan = Some(full);
            restart(oracle.as_ref(), &h, sched, &x1, &stages, &opts, &mut rng)?.trace
        }
        (_, Some(sched)) => run(oracle.as_ref(), &h, sched, &x1, t_max, &opts, &mut rng)?.trace,
        (_, None) => unreachable!("solver cells always carry a schedule"),
    };
    if check {
        out.certificate = match certificate_check(&trace, &cell.params, oracle.as_ref(), &h, &reference) {
            Ok(rep) if rep.ok() => CertificateStatus::Ok {
                min_relative_slack: rep.min_relative_slack,
            },
            Ok(rep) => CertificateStatus::Violated {
                violations: rep.violations,
            },
            Err(e) => CertificateStatus::Unavailable { reason: e.to_string() },
        };
    }
    out.rows = rows_of(&trace);
    out.iterations = iterations_to(&out.rows, out.v0, plan.run.epsilon);
    Ok(())
}

/// Runs every (cell, seed) pair on `workers` threads (all cores when
/// `None`). Failures are recorded per seed; nothing touches the disk.
pub fn run_grid(plan: &GridPlan, workers: Option<usize>) -> Result<Vec<CellOutcome>, BenchError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(BenchError::Validation("`--workers`: must be >= 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| BenchError::Validation(format!("thread pool: {e}")))?;
    let tasks: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.run.seeds.len()).map(move |s| (c, s)))
        .collect();
    let results: Vec<SeedOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, s)| run_seed(plan, &plan.cells[c], plan.run.seeds[s], s == 0))
            .collect()
    });
    let mut it = results.into_iter();
    Ok(plan
        .cells
        .iter()
        .map(|cell| CellOutcome {
            cell: cell.clone(),
            seeds: it.by_ref().take(plan.run.seeds.len()).collect(),
        })
        .collect())
}

/// `(degree, offset, safety_scale)` of a polynomial schedule.
pub fn schedule_summary(cell: &CellSpec) -> Option<(f64, f64, f64)> {
    cell.schedule.as_ref().and_then(|s| match s.kind {
        ScheduleKind::Polynomial { m, offset, .. } => Some((m, offset, s.safety_scale)),
        ScheduleKind::Custom { .. } => None,
    })
}

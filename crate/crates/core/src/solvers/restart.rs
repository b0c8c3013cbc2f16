//! Periodic restarts: `n` stages of `K` iterations chained through the
//! last (non-averaged) iterate, then one final stage of `T` iterations.

use serde::{Deserialize, Serialize};

use super::schedule::{default_schedule, StepSchedule, Target};
use super::{run, RunTrace, TraceOptions};
use crate::error::{Error, Result};
use crate::geometry::{inv_r_power, GeometryParams};
use crate::oracles::GradientOracle;
use crate::regularizers::Regularizer;
use crate::rng::SimRng;

/// Horizon over which the stage constant `K₁` is maximised.
const K1_HORIZON: usize = 100_000;
/// Largest final-stage length the planner will propose.
const FINAL_STAGE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartPlan {
    /// Number of halving stages.
    pub n: usize,
    /// Iterations per halving stage.
    pub k: usize,
    /// Final-stage iterations.
    pub t: usize,
    /// `sup_T T^{m+1} γ_1 / min(A_T, γ_T)`; 0 for hand-made plans.
    #[serde(default)]
    pub k1: f64,
    /// `K₁` divided by its condition-number scaling.
    #[serde(default)]
    pub constant: f64,
    /// Whether the final-stage target was met below the search cap.
    #[serde(default = "yes")]
    pub reached: bool,
}

fn yes() -> bool {
    true
}

impl RestartPlan {
    pub fn new(n: usize, k: usize, t: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("K", "must be >= 1"));
        }
        if t < k {
            return Err(Error::param("T", format!("final stage T = {t} shorter than K = {k}")));
        }
        Ok(Self {
            n,
            k,
            t,
            k1: 0.0,
            constant: 0.0,
            reached: true,
        })
    }

    pub fn total_iterations(&self) -> usize {
        self.n * self.k + self.t
    }

    /// The same plan cut to at most `budget` iterations: halving stages are
    /// dropped from the end, then the final stage is shortened (never
    /// below `K` unless the budget itself is smaller).
    pub fn truncated(&self, budget: usize) -> Self {
        let mut out = self.clone();
        if budget == 0 || self.total_iterations() <= budget {
            return out;
        }
        if budget < self.k {
            out.n = 0;
            out.k = budget;
            out.t = budget;
            return out;
        }
        out.n = self.n.min(budget / self.k - 1);
        out.t = (budget - out.n * self.k).min(self.t);
        out
    }
}

/// Per-iteration deterministic and expected-noise contributions to the
/// right-hand side of the pathwise certificate (before dividing by `A_T`).
pub(crate) fn bound_increments(params: &GeometryParams, target: Target, alpha: f64, gamma: f64, cum: f64) -> (f64, f64) {
    let (q, p, mu, m) = (params.q, params.p, params.mu, params.m);
    let det = match target {
        Target::Nacsmd => params.l * alpha * inv_r_power(2.0 * m * alpha / (mu * gamma), params.r),
        Target::Acsmd => {
            let base = 2.0 * m * alpha * (alpha / cum).powf(q - 1.0) / (mu * gamma);
            params.l * cum * inv_r_power(base, params.r)
        }
    };
    let det = if det.is_nan() { 0.0 } else { det };
    let noise = 2.0 * params.sigma.powf(p) / (p * mu.powf(p / q)) * (alpha.powf(q) / gamma).powf(p / q);
    (det, noise)
}

/// Restart plan for the default schedule of `target`.
pub fn plan_from_params(params: &GeometryParams, target: Target, v0: f64, epsilon: f64) -> Result<RestartPlan> {
    plan_for_schedule(params, &default_schedule(params, target)?, v0, epsilon)
}

/// `n = ⌈log₂(V₀/ε)⌉`, `K = ⌈(2K₁)^{1/(m+1)}⌉`, and `T ≥ K` the first
/// length at which the deterministic plus expected-noise terms of the
/// certificate, divided by `A_T`, fall below `ε/2`.
pub fn plan_for_schedule(params: &GeometryParams, sched: &StepSchedule, v0: f64, epsilon: f64) -> Result<RestartPlan> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", "must be > 0"));
    }
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::param("V0", "must be > 0"));
    }
    let deg = sched
        .degree()
        .ok_or_else(|| Error::param("schedule", "restart planning needs a polynomial schedule"))?;
    let a1 = deg + 1.0;
    let n = if epsilon >= v0 { 0 } else { (v0 / epsilon).log2().ceil() as usize };

    let g1 = sched.gamma(1);
    let mut cum = 0.0;
    let mut k1: f64 = 0.0;
    for t in 1..=K1_HORIZON {
        cum += sched.alpha(t);
        let denom = cum.min(sched.gamma(t));
        k1 = k1.max((t as f64).powf(a1) * g1 / denom);
    }
    let k = ((2.0 * k1).powf(1.0 / a1).ceil() as usize).max(1);
    let scaling = match sched.target {
        Target::Nacsmd => params.condition().powf(a1),
        Target::Acsmd => params.condition().powf(a1 / params.q),
    };
    let constant = if scaling > 0.0 { k1 / scaling } else { k1 };

    let mut cum = 0.0;
    let mut acc = 0.0;
    let mut t_final = None;
    for t in 1..=FINAL_STAGE_CAP {
        let alpha = sched.alpha(t);
        cum += alpha;
        let (det, noise) = bound_increments(params, sched.target, alpha, sched.gamma(t), cum);
        acc += det + noise;
        if t >= k && acc / cum <= epsilon / 2.0 {
            t_final = Some(t);
            break;
        }
    }
    Ok(RestartPlan {
        n,
        k,
        t: t_final.unwrap_or(FINAL_STAGE_CAP),
        k1,
        constant,
        reached: t_final.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutput {
    /// Averaged output of the final stage.
    pub y: Vec<f64>,
    /// Last iterate of the final stage.
    pub x_last: Vec<f64>,
    /// Start point of every stage, `x_1^1, …, x_1^{n+1}`.
    pub stage_starts: Vec<Vec<f64>>,
    /// Concatenated trace, iteration counters made global.
    pub trace: RunTrace,
}

/// Runs the restart scheme with the same schedule in every stage (the
/// schedule's clock restarts at `t = 1`). All stages share `rng`, so
/// `n = 0` reproduces a single call bit for bit.
pub fn restart<O: GradientOracle + ?Sized>(
    oracle: &O,
    h: &Regularizer,
    sched: &StepSchedule,
    x1: &[f64],
    plan: &RestartPlan,
    opts: &TraceOptions,
    rng: &mut SimRng,
) -> Result<RestartOutput> {
    if plan.k == 0 || plan.t < plan.k {
        return Err(Error::param("plan", "requires K >= 1 and T >= K"));
    }
    let mut start = x1.to_vec();
    let mut stage_starts = vec![start.clone()];
    let mut trace = RunTrace {
        algorithm: format!("restarted-{}", sched.target),
        every: opts.every,
        records: Vec::new(),
    };
    for stage in 0..plan.n {
        let out = run(oracle, h, sched, &start, plan.k, opts, rng).map_err(|e| shift_error(e, stage * plan.k))?;
        append(&mut trace, out.trace, stage * plan.k);
        start = out.x_last;
        stage_starts.push(start.clone());
    }
    let offset = plan.n * plan.k;
    let out = run(oracle, h, sched, &start, plan.t, opts, rng).map_err(|e| shift_error(e, offset))?;
    append(&mut trace, out.trace, offset);
    if plan.n == 0 {
        trace.algorithm = out_name(sched.target);
    }
    Ok(RestartOutput {
        y: out.x_ag,
        x_last: out.x_last,
        stage_starts,
        trace,
    })
}

fn out_name(t: Target) -> String {
    t.to_string()
}

fn append(trace: &mut RunTrace, part: RunTrace, offset: usize) {
    trace.records.extend(part.records.into_iter().map(|mut r| {
        r.t += offset;
        r
    }));
}

fn shift_error(e: Error, offset: usize) -> Error {
    match e {
        Error::Numerical { iteration, reason } => Error::Numerical {
            iteration: iteration + offset,
            reason,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::RidgeInstance;
    use crate::rng::substream;
    use crate::solvers::acsmd;

    #[test]
    fn truncation_respects_budget() {
        let plan = RestartPlan::new(6, 10, 40).unwrap();
        assert_eq!(plan.truncated(1000), plan);
        let t = plan.truncated(75);
        assert_eq!((t.n, t.k, t.t), (6, 10, 15));
        assert!(t.total_iterations() <= 75 && t.t >= t.k);
        let t = plan.truncated(35);
        assert_eq!((t.n, t.k, t.t), (2, 10, 15));
        let t = plan.truncated(4);
        assert_eq!((t.n, t.k, t.t), (0, 4, 4));
    }

    #[test]
    fn plan_examples() {
        let p = GeometryParams::derive(2.0, 2.0, 100.0, 1.0).unwrap();
        let plan = plan_from_params(&p, Target::Acsmd, 1024.0, 1.0).unwrap();
        assert_eq!(plan.n, 10);
        assert!(plan.k >= 10 && plan.k <= 200, "{plan:?}");
        assert!(plan.constant > 0.0);
        assert!(plan.t >= plan.k);
        assert!(plan.reached);
        let flat = plan_from_params(&p, Target::Acsmd, 1.0, 2.0).unwrap();
        assert_eq!(flat.n, 0);
    }

    #[test]
    fn plan_k_scales_with_condition() {
        let k_of = |l: f64, target| {
            let p = GeometryParams::derive(2.0, 2.0, l, 1.0).unwrap();
            plan_from_params(&p, target, 4.0, 1.0).unwrap().k as f64
        };
        // non-accelerated stages grow linearly in L/μ, accelerated ones
        // clearly sub-linearly
        let lin = k_of(10_000.0, Target::Nacsmd) / k_of(100.0, Target::Nacsmd);
        assert!(lin > 50.0 && lin < 200.0, "{lin}");
        let acc = k_of(10_000.0, Target::Acsmd) / k_of(100.0, Target::Acsmd);
        assert!(acc < 40.0, "{acc}");
        // with unit offset the lift no longer dominates and K ∝ √(L/μ)
        let unit = |l: f64| {
            let p = GeometryParams::derive(2.0, 2.0, l, 1.0).unwrap();
            let s = crate::solvers::polynomial_schedule(&p, Target::Acsmd, 1.0, 1.0).unwrap();
            plan_for_schedule(&p, &s, 4.0, 1.0).unwrap().k as f64
        };
        let sq = unit(10_000.0) / unit(100.0);
        assert!(sq > 7.0 && sq < 14.0, "{sq}");
    }

    #[test]
    fn stochastic_final_stage_grows_like_sigma_over_eps() {
        // q = 2: T ∝ (σ/μ)(σ/ε)
        let p = GeometryParams::derive(2.0, 2.0, 1.0, 1.0)
            .unwrap()
            .with_noise(1.0, 1.0)
            .unwrap();
        let t1 = plan_from_params(&p, Target::Nacsmd, 1.0, 0.01).unwrap().t as f64;
        let t2 = plan_from_params(&p, Target::Nacsmd, 1.0, 0.005).unwrap().t as f64;
        assert!(t2 / t1 > 1.5 && t2 / t1 < 2.5, "{}", t2 / t1);
    }

    #[test]
    fn zero_stages_is_a_single_run() {
        let inst = RidgeInstance::new(vec![1.0, -2.0, 0.5], 0.1, 2.0, 4.0).unwrap();
        let h = inst.regularizer().unwrap();
        let p = inst.geometry(2.0).unwrap();
        let s = default_schedule(&p, Target::Acsmd).unwrap();
        let plan = RestartPlan::new(0, 10, 30).unwrap();
        let a = restart(&inst, &h, &s, &[0.0; 3], &plan, &TraceOptions::full(), &mut substream(4, 0)).unwrap();
        let b = acsmd(&inst, &h, &s, &[0.0; 3], 30, &TraceOptions::full(), &mut substream(4, 0)).unwrap();
        assert_eq!(a.y, b.x_ag);
        assert_eq!(a.x_last, b.x_last);
        assert_eq!(a.trace.records, b.trace.records);
    }

    #[test]
    fn stages_chain_through_last_iterate() {
        let inst = RidgeInstance::new(vec![1.0, -2.0], 0.1, 2.0, 2.0).unwrap();
        let h = inst.regularizer().unwrap();
        let p = inst.geometry(2.0).unwrap();
        let s = default_schedule(&p, Target::Nacsmd).unwrap();
        let plan = RestartPlan::new(3, 5, 5).unwrap();
        let out = restart(&inst, &h, &s, &[0.0; 2], &plan, &TraceOptions::full(), &mut substream(1, 1)).unwrap();
        assert_eq!(out.stage_starts.len(), 4);
        for k in 1..=3 {
            let last = &out.trace.records[k * 5 - 1];
            assert_eq!(&last.vectors.as_ref().unwrap().x_next, &out.stage_starts[k]);
            let first = &out.trace.records[k * 5];
            assert_eq!(&first.vectors.as_ref().unwrap().x, &out.stage_starts[k]);
        }
        assert_eq!(out.trace.records.last().unwrap().t, 20);
    }

    #[test]
    fn plan_validation() {
        assert!(RestartPlan::new(1, 0, 1).is_err());
        assert!(RestartPlan::new(1, 5, 4).is_err());
    }
}

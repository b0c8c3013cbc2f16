//! NACSMD and ACSMD, the restart driver and the Euclidean multi-stage
//! baseline.
//!
//! Both solvers take the distance-generating function to be the
//! regularizer itself, so every step is the closed-form
//! [`Regularizer::composite_prox`].

mod baseline;
mod restart;
mod schedule;

pub use baseline::{acsa_baseline, AcsaConfig, AcsaOutput};
pub use restart::{plan_for_schedule, plan_from_params, restart, RestartOutput, RestartPlan};
pub use schedule::{
    default_degree, default_offset, default_schedule, polynomial_schedule, tune_safety, validate_schedule,
    ScheduleKind, ScheduleReport, StepSchedule, Target, TUNING_HORIZON,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bregman;
use crate::linalg::{all_finite, combine, sub};
use crate::oracles::GradientOracle;
use crate::regularizers::Regularizer;
use crate::rng::SimRng;

/// Reference point used to annotate traces with gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x_opt: Vec<f64>,
    pub psi_star: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Keep every `every`-th iteration; 0 records nothing.
    pub every: usize,
    /// Store iterate, gradient and noise vectors (needed by the
    /// certificate checker).
    pub vectors: bool,
    /// When set, each record carries `Ψ(x^ag_{t+1}) − Ψ*` and
    /// `D(x_opt, x_{t+1})`.
    pub reference: Option<Reference>,
}

impl TraceOptions {
    pub fn off() -> Self {
        Self::default()
    }

    /// Every iteration with all vectors.
    pub fn full() -> Self {
        Self {
            every: 1,
            vectors: true,
            reference: None,
        }
    }

    /// Every iteration, scalars only, gaps against `reference`.
    pub fn gaps(reference: Reference) -> Self {
        Self {
            every: 1,
            vectors: false,
            reference: Some(reference),
        }
    }

    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }
}

/// Vectors of one iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterVectors {
    /// `x_t`, the prox centre.
    pub x: Vec<f64>,
    /// `x_{t+1}`.
    pub x_next: Vec<f64>,
    /// `x^ag_{t+1}`.
    pub x_ag: Vec<f64>,
    /// `x^md_t` (ACSMD only).
    pub x_md: Option<Vec<f64>>,
    pub gradient: Vec<f64>,
    /// `Δ_t = G − ∇F` at the query point, when the oracle reveals `∇F`.
    pub noise: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// `A_t`.
    pub cum_alpha: f64,
    pub psi_gap: Option<f64>,
    pub bregman_to_opt: Option<f64>,
    pub vectors: Option<IterVectors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub every: usize,
    pub records: Vec<IterRecord>,
}

impl RunTrace {
    fn new(algorithm: &str, opts: &TraceOptions) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            every: opts.every,
            records: Vec::new(),
        }
    }

    /// `true` when every iteration was kept with its vectors.
    pub fn is_complete(&self) -> bool {
        self.every == 1 && self.records.iter().all(|r| r.vectors.is_some())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    /// `x_{T+1}`.
    pub x_last: Vec<f64>,
    /// `x^ag_{T+1}`.
    pub x_ag: Vec<f64>,
    pub trace: RunTrace,
}

/// `Ψ = F + H` when the oracle exposes `F`.
pub fn composite_value<O: GradientOracle + ?Sized>(oracle: &O, h: &Regularizer, x: &[f64]) -> Option<f64> {
    oracle.objective(x).map(|f| f + h.evaluate(x))
}

fn check_inputs<O: GradientOracle + ?Sized>(
    oracle: &O,
    h: &Regularizer,
    sched: &StepSchedule,
    x1: &[f64],
    t_max: usize,
    target: Target,
) -> Result<()> {
    if sched.target != target {
        return Err(Error::param(
            "schedule",
            format!("schedule built for {} cannot drive {target}", sched.target),
        ));
    }
    if t_max == 0 {
        return Err(Error::param("T", "must be >= 1"));
    }
    if let Some(n) = sched.len() {
        if n < t_max {
            return Err(Error::param("T", format!("custom schedule covers only {n} iterations")));
        }
    }
    if x1.len() != oracle.dimension() || h.dimension != oracle.dimension() {
        return Err(Error::param("x1", "dimension mismatch between start point, oracle and regularizer"));
    }
    if !all_finite(x1) {
        return Err(Error::param("x1", "start point must be finite"));
    }
    Ok(())
}

struct Recorder<'a, O: ?Sized> {
    oracle: &'a O,
    h: &'a Regularizer,
    opts: &'a TraceOptions,
    trace: RunTrace,
}

impl<'a, O: GradientOracle + ?Sized> Recorder<'a, O> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        t: usize,
        alpha: f64,
        gamma: f64,
        cum: f64,
        vectors: impl FnOnce() -> IterVectors,
        x_next: &[f64],
        x_ag: &[f64],
    ) {
        if self.opts.every == 0 || t % self.opts.every != 0 && t != 1 {
            return;
        }
        let (psi_gap, bregman_to_opt) = match &self.opts.reference {
            Some(r) => (
                composite_value(self.oracle, self.h, x_ag).map(|v| v - r.psi_star),
                Some(bregman(self.h, &r.x_opt, x_next)),
            ),
            None => (None, None),
        };
        self.trace.records.push(IterRecord {
            t,
            alpha,
            gamma,
            cum_alpha: cum,
            psi_gap,
            bregman_to_opt,
            vectors: if self.opts.vectors { Some(vectors()) } else { None },
        });
    }
}

/// Non-accelerated composite stochastic mirror descent.
///
/// `x_{t+1} = argmin α_t[⟨G(x_t, ξ_t), x⟩ + H(x)] + γ_t D_H(x, x_t)`;
/// returns `x_{T+1}` and the `α`-weighted average of `x_2, …, x_{T+1}`.
pub fn nacsmd<O: GradientOracle + ?Sized>(
    oracle: &O,
    h: &Regularizer,
    sched: &StepSchedule,
    x1: &[f64],
    t_max: usize,
    opts: &TraceOptions,
    rng: &mut SimRng,
) -> Result<SolverOutput> {
    check_inputs(oracle, h, sched, x1, t_max, Target::Nacsmd)?;
    let mut rec = Recorder {
        oracle,
        h,
        opts,
        trace: RunTrace::new("nacsmd", opts),
    };
    let mut x = x1.to_vec();
    let mut x_ag = x1.to_vec();
    let mut cum = 0.0;
    for t in 1..=t_max {
        let alpha = sched.alpha(t);
        let gamma = sched.gamma(t);
        let g = oracle.sample_gradient(&x, rng);
        let x_next = h.composite_prox(&g, &x, alpha, gamma)?;
        if !all_finite(&x_next) {
            return Err(Error::numerical(t, "non-finite iterate"));
        }
        cum += alpha;
        x_ag = combine(1.0 - alpha / cum, &x_ag, alpha / cum, &x_next);
        rec.record(
            t,
            alpha,
            gamma,
            cum,
            || IterVectors {
                noise: oracle.mean_gradient(&x).map(|m| sub(&g, &m)),
                x: x.clone(),
                x_next: x_next.clone(),
                x_ag: x_ag.clone(),
                x_md: None,
                gradient: g.clone(),
            },
            &x_next,
            &x_ag,
        );
        x = x_next;
    }
    Ok(SolverOutput {
        x_last: x,
        x_ag,
        trace: rec.trace,
    })
}

/// Accelerated composite stochastic mirror descent.
///
/// Queries the oracle at `x^md_t = (A_{t−1}/A_t)x^ag_t + (α_t/A_t)x_t`,
/// takes the same prox step from `x_t`, and averages
/// `x^ag_{t+1} = (A_{t−1}/A_t)x^ag_t + (α_t/A_t)x_{t+1}`, with `A_0 = 0`
/// and `x^ag_1 = x_1`.
pub fn acsmd<O: GradientOracle + ?Sized>(
    oracle: &O,
    h: &Regularizer,
    sched: &StepSchedule,
    x1: &[f64],
    t_max: usize,
    opts: &TraceOptions,
    rng: &mut SimRng,
) -> Result<SolverOutput> {
    check_inputs(oracle, h, sched, x1, t_max, Target::Acsmd)?;
    let mut rec = Recorder {
        oracle,
        h,
        opts,
        trace: RunTrace::new("acsmd", opts),
    };
    let mut x = x1.to_vec();
    let mut x_ag = x1.to_vec();
    let mut cum = 0.0;
    for t in 1..=t_max {
        let alpha = sched.alpha(t);
        let gamma = sched.gamma(t);
        let prev = cum;
        cum += alpha;
        let (wa, wb) = (prev / cum, alpha / cum);
        let x_md = combine(wa, &x_ag, wb, &x);
        let g = oracle.sample_gradient(&x_md, rng);
        let x_next = h.composite_prox(&g, &x, alpha, gamma)?;
        if !all_finite(&x_next) {
            return Err(Error::numerical(t, "non-finite iterate"));
        }
        x_ag = combine(wa, &x_ag, wb, &x_next);
        rec.record(
            t,
            alpha,
            gamma,
            cum,
            || IterVectors {
                noise: oracle.mean_gradient(&x_md).map(|m| sub(&g, &m)),
                x: x.clone(),
                x_next: x_next.clone(),
                x_ag: x_ag.clone(),
                x_md: Some(x_md.clone()),
                gradient: g.clone(),
            },
            &x_next,
            &x_ag,
        );
        x = x_next;
    }
    Ok(SolverOutput {
        x_last: x,
        x_ag,
        trace: rec.trace,
    })
}

/// Dispatches on the schedule's target.
pub fn run<O: GradientOracle + ?Sized>(
    oracle: &O,
    h: &Regularizer,
    sched: &StepSchedule,
    x1: &[f64],
    t_max: usize,
    opts: &TraceOptions,
    rng: &mut SimRng,
) -> Result<SolverOutput> {
    match sched.target {
        Target::Nacsmd => nacsmd(oracle, h, sched, x1, t_max, opts, rng),
        Target::Acsmd => acsmd(oracle, h, sched, x1, t_max, opts, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryParams;
    use crate::oracles::RidgeInstance;
    use crate::rng::substream;

    #[test]
    fn first_query_point_is_start() {
        let inst = RidgeInstance::new(vec![1.0, -1.0], 0.1, 1.0, 2.0).unwrap();
        let h = inst.regularizer().unwrap();
        let p = inst.geometry(2.0).unwrap();
        let s = default_schedule(&p, Target::Acsmd).unwrap();
        let x1 = [0.3, 0.7];
        let out = acsmd(&inst, &h, &s, &x1, 3, &TraceOptions::full(), &mut substream(1, 0)).unwrap();
        let v = out.trace.records[0].vectors.as_ref().unwrap();
        assert_eq!(v.x_md.as_deref(), Some(&x1[..]));
    }

    #[test]
    fn average_is_convex_combination() {
        let inst = RidgeInstance::new(vec![0.5, -0.5, 1.0], 0.1, 2.0, 3.0).unwrap();
        let h = inst.regularizer().unwrap();
        let p = inst.geometry(2.0).unwrap();
        let s = default_schedule(&p, Target::Nacsmd).unwrap();
        let out = nacsmd(&inst, &h, &s, &[0.0; 3], 40, &TraceOptions::full(), &mut substream(2, 0)).unwrap();
        let mut weighted = vec![0.0; 3];
        let mut total = 0.0;
        for r in &out.trace.records {
            let v = r.vectors.as_ref().unwrap();
            for j in 0..3 {
                weighted[j] += r.alpha * v.x_next[j];
            }
            total += r.alpha;
        }
        for j in 0..3 {
            assert!((weighted[j] / total - out.x_ag[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_target_and_zero_horizon() {
        let inst = RidgeInstance::new(vec![1.0], 0.0, 1.0, 2.0).unwrap();
        let h = inst.regularizer().unwrap();
        let p = GeometryParams::derive(2.0, 2.0, 1.0, 1.0).unwrap();
        let s = default_schedule(&p, Target::Nacsmd).unwrap();
        let mut rng = substream(0, 0);
        assert!(acsmd(&inst, &h, &s, &[0.0], 5, &TraceOptions::off(), &mut rng).is_err());
        assert!(nacsmd(&inst, &h, &s, &[0.0], 0, &TraceOptions::off(), &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let inst = RidgeInstance::new(vec![1.0, 2.0], 0.1, 2.0, 4.0).unwrap();
        let h = inst.regularizer().unwrap();
        let p = inst.geometry(2.0).unwrap();
        let s = default_schedule(&p, Target::Acsmd).unwrap();
        let a = acsmd(&inst, &h, &s, &[0.0; 2], 50, &TraceOptions::full(), &mut substream(7, 3)).unwrap();
        let b = acsmd(&inst, &h, &s, &[0.0; 2], 50, &TraceOptions::full(), &mut substream(7, 3)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x_ag, b.x_ag);
    }
}

//! Step-size sequences `(α_t, γ_t)` and their feasibility conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryParams;

/// Longest horizon over which default schedules are certified.
pub const TUNING_HORIZON: usize = 1_000_000;

/// Largest power-of-two safety factor tried before giving up.
const MAX_SAFETY_DOUBLINGS: u32 = 60;

/// Relative allowance for floating-point error in the feasibility checks.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Nacsmd,
    Acsmd,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Nacsmd => write!(f, "nacsmd"),
            Target::Acsmd => write!(f, "acsmd"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `α_t = (t + offset)^m`, `γ_t = (t + gamma_offset)^{m+1} / (m+1)`.
    Polynomial { m: f64, offset: f64, gamma_offset: f64 },
    /// Explicit sequences, `alpha[t-1] = α_t`.
    Custom { alpha: Vec<f64>, gamma: Vec<f64> },
}

/// A step-size schedule. `safety_scale = s` lifts every `γ_t` by
/// `(s − 1) γ_1`: the increments `γ_{t+1} − γ_t` are untouched, so the
/// first feasibility condition survives the repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub target: Target,
    pub safety_scale: f64,
}

impl StepSchedule {
    /// Polynomial schedule `α_t = (t + offset)^m`. For `m < 0` the `γ`
    /// offset is shifted by one so that `α_t ≥ γ_{t+1} − γ_t` still holds.
    pub fn polynomial(target: Target, m: f64, offset: f64) -> Result<Self> {
        if !(m.is_finite() && m > -1.0) {
            return Err(Error::param("m", format!("polynomial degree must exceed -1, got {m}")));
        }
        if !(offset.is_finite() && offset >= 1.0) {
            return Err(Error::param("offset", format!("must be finite and >= 1, got {offset}")));
        }
        let gamma_offset = if m >= 0.0 { offset - 1.0 } else { offset };
        Ok(Self {
            kind: ScheduleKind::Polynomial { m, offset, gamma_offset },
            target,
            safety_scale: 1.0,
        })
    }

    pub fn custom(target: Target, alpha: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != gamma.len() {
            return Err(Error::param("schedule", "alpha and gamma must be non-empty and equally long"));
        }
        if alpha.iter().chain(&gamma).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::param("schedule", "step sizes must be finite and > 0"));
        }
        Ok(Self {
            kind: ScheduleKind::Custom { alpha, gamma },
            target,
            safety_scale: 1.0,
        })
    }

    pub fn with_safety_scale(mut self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s >= 1.0) {
            return Err(Error::param("safety_scale", format!("must be >= 1, got {s}")));
        }
        self.safety_scale = s;
        Ok(self)
    }

    /// Polynomial degree, if any.
    pub fn degree(&self) -> Option<f64> {
        match self.kind {
            ScheduleKind::Polynomial { m, .. } => Some(m),
            ScheduleKind::Custom { .. } => None,
        }
    }

    /// Number of iterations the schedule can drive (`None` = unbounded).
    pub fn len(&self) -> Option<usize> {
        match &self.kind {
            ScheduleKind::Polynomial { .. } => None,
            ScheduleKind::Custom { alpha, .. } => Some(alpha.len()),
        }
    }

    fn raw_gamma(&self, t: usize) -> f64 {
        match &self.kind {
            ScheduleKind::Polynomial { m, gamma_offset, .. } => (t as f64 + gamma_offset).powf(m + 1.0) / (m + 1.0),
            ScheduleKind::Custom { gamma, .. } => gamma[t - 1],
        }
    }

    /// `α_t`, `t ≥ 1`. Panics past the end of a custom schedule.
    pub fn alpha(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        match &self.kind {
            ScheduleKind::Polynomial { m, offset, .. } => (t as f64 + offset).powf(*m),
            ScheduleKind::Custom { alpha, .. } => alpha[t - 1],
        }
    }

    /// `γ_t`, `t ≥ 1`.
    pub fn gamma(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        self.raw_gamma(t) + (self.safety_scale - 1.0) * self.raw_gamma(1)
    }

    /// `(α_t, γ_t, A_t)` for `t = 1..=n`.
    pub fn table(&self, n: usize) -> Vec<(f64, f64, f64)> {
        let mut acc = 0.0;
        (1..=n)
            .map(|t| {
                let a = self.alpha(t);
                acc += a;
                (a, self.gamma(t), acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub ok: bool,
    pub first_violation: Option<usize>,
    /// Smallest of `α_t − (γ_{t+1} − γ_t)` and `γ_t − (2M/μ)·(…)` over the
    /// horizon.
    pub slack_min: f64,
}

/// Right-hand side of the second condition: `(2M/μ)α_t` for NACSMD,
/// `(2M/μ)α_t^q / A_t^{q−1}` for ACSMD.
pub(crate) fn gamma_requirement(target: Target, params: &GeometryParams, alpha: f64, cum: f64) -> f64 {
    let k = 2.0 * params.m / params.mu;
    match target {
        Target::Nacsmd => k * alpha,
        Target::Acsmd => k * alpha * (alpha / cum).powf(params.q - 1.0),
    }
}

/// Exact per-`t` check of both feasibility conditions for `t ≤ horizon`
/// (the increment condition only for `t < horizon`, the last one it is
/// used for).
pub fn validate_schedule(sched: &StepSchedule, params: &GeometryParams, horizon: usize) -> ScheduleReport {
    let horizon = match sched.len() {
        Some(n) => horizon.min(n),
        None => horizon,
    };
    let mut ok = true;
    let mut first = None;
    let mut slack_min = f64::INFINITY;
    let mut cum = 0.0;
    let mut gamma = sched.gamma(1);
    for t in 1..=horizon {
        let alpha = sched.alpha(t);
        cum += alpha;
        let mut slack = gamma - gamma_requirement(sched.target, params, alpha, cum);
        let next = if t < horizon { Some(sched.gamma(t + 1)) } else { None };
        if let Some(g1) = next {
            slack = slack.min(alpha - (g1 - gamma));
        }
        // equality cases (e.g. constant α with linear γ) must survive rounding
        let tol = ROUNDING * next.unwrap_or(gamma).max(alpha);
        if !(slack >= -tol) && ok {
            ok = false;
            first = Some(t);
        }
        slack_min = slack_min.min(slack);
        if let Some(g1) = next {
            gamma = g1;
        }
    }
    ScheduleReport {
        ok,
        first_violation: first,
        slack_min,
    }
}

/// Smallest power-of-two safety factor (times the current one) making the
/// schedule feasible up to `horizon`.
pub fn tune_safety(sched: StepSchedule, params: &GeometryParams, horizon: usize) -> Result<StepSchedule> {
    let base = sched.safety_scale;
    for k in 0..=MAX_SAFETY_DOUBLINGS {
        let s = base * 2f64.powi(k as i32);
        let candidate = sched.clone().with_safety_scale(s)?;
        if validate_schedule(&candidate, params, horizon).ok {
            return Ok(candidate);
        }
    }
    Err(Error::param(
        "schedule",
        "no safety scale restores the step-size conditions (the increment condition fails)",
    ))
}

/// Degree of the default polynomial schedule. In the smooth case `r = 0`
/// the first branch is unbounded: NACSMD falls back to `(2−q)/(q−1)`,
/// ACSMD to `max(1, (2−q)/(q−1))`, the smallest degree that still
/// accelerates.
pub fn default_degree(params: &GeometryParams, target: Target) -> f64 {
    let q = params.q;
    let floor = (2.0 - q) / (q - 1.0);
    if params.r == 0.0 {
        return match target {
            Target::Nacsmd => floor,
            Target::Acsmd => floor.max(1.0),
        };
    }
    match target {
        Target::Nacsmd => (1.0 / params.r - 1.0).max(floor),
        Target::Acsmd => (q / params.r - 2.0).max(floor),
    }
}

/// Offset of the default schedule: `2(m+1)M/μ + 1` (NACSMD) or
/// `[2(m+1)M/μ]^{1/q} + 1` (ACSMD).
pub fn default_offset(params: &GeometryParams, target: Target, m: f64) -> f64 {
    let base = 2.0 * (m + 1.0) * params.m / params.mu;
    match target {
        Target::Nacsmd => base + 1.0,
        Target::Acsmd => base.powf(1.0 / params.q) + 1.0,
    }
}

/// Default polynomial schedule, safety-tuned over [`TUNING_HORIZON`].
pub fn default_schedule(params: &GeometryParams, target: Target) -> Result<StepSchedule> {
    let m = default_degree(params, target);
    polynomial_schedule(params, target, m, default_offset(params, target, m))
}

/// Polynomial schedule of a chosen degree and offset, safety-tuned over
/// [`TUNING_HORIZON`].
pub fn polynomial_schedule(params: &GeometryParams, target: Target, m: f64, offset: f64) -> Result<StepSchedule> {
    let sched = StepSchedule::polynomial(target, m, offset)?;
    // q close to κ sends the degree towards 1/r; past ~50 the weights
    // leave f64 long before the horizon
    if !sched.gamma(TUNING_HORIZON + 1).is_finite() {
        return Err(Error::param(
            "degree",
            format!("m = {m:.3} overflows f64 within {TUNING_HORIZON} iterations; pick a smaller degree"),
        ));
    }
    tune_safety(sched, params, TUNING_HORIZON)
}

//! Experiment configuration (TOML).
//!
//! A file may hold a solver grid (`instance`, `solver`, `run`), a
//! `lowerbound` block, a `concentration` block, or any combination; each
//! subcommand validates only the parts it needs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use compsmd::geometry::GeometryParams;
use compsmd::oracles::{GradientOracle, NoiseKind, RidgeInstance, RidgeResponseOracle};
use compsmd::solvers::{
    default_degree, default_offset, tune_safety, validate_schedule, StepSchedule, Target, TUNING_HORIZON,
};
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub instance: Option<InstanceConfig>,
    #[serde(default)]
    pub solver: Vec<SolverConfig>,
    pub run: Option<RunConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    pub lowerbound: Option<LowerBoundConfig>,
    pub concentration: Option<ConcentrationConfig>,
}

fn default_name() -> String {
    "experiment".into()
}

/// How the ridge oracle draws its randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `∇F(x) − 2ξa`: noise from the response only.
    #[default]
    Response,
    /// `2(aᵀx − b)a` from one fresh `(a, b)` pair.
    Sample,
    /// Exact gradients.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRule {
    Zeros,
    Ones,
    /// Entries i.i.d. `U[-1, 1]`, redrawn per seed.
    Uniform,
    /// Entries i.i.d. `N(0, 1)`, redrawn per seed.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Rule(PointRule),
    Values(Vec<f64>),
}

impl Default for PointSpec {
    fn default() -> Self {
        PointSpec::Rule(PointRule::Zeros)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub dims: Vec<usize>,
    /// Not reported for the published experiments; 4 is assumed.
    #[serde(default = "four")]
    pub q: f64,
    #[serde(default = "two")]
    pub kappa: f64,
    #[serde(default = "two")]
    pub mu: f64,
    #[serde(default = "tenth")]
    pub sigma_b: f64,
    #[serde(default)]
    pub x_star: PointSpec,
    #[serde(default)]
    pub x1: PointSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Multipliers applied to the smoothness constant handed to the
    /// solvers (an over-estimate when > 1).
    #[serde(default = "unit_multiplier")]
    pub l_multipliers: Vec<f64>,
}

fn two() -> f64 {
    2.0
}
fn four() -> f64 {
    4.0
}
fn tenth() -> f64 {
    0.1
}
fn unit_multiplier() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nacsmd,
    Acsmd,
    RestartedNacsmd,
    RestartedAcsmd,
    /// Multi-stage AC-SA baseline.
    Acsa,
}

impl Algorithm {
    pub fn target(self) -> Option<Target> {
        match self {
            Algorithm::Nacsmd | Algorithm::RestartedNacsmd => Some(Target::Nacsmd),
            Algorithm::Acsmd | Algorithm::RestartedAcsmd => Some(Target::Acsmd),
            Algorithm::Acsa => None,
        }
    }

    pub fn restarted(self) -> bool {
        matches!(self, Algorithm::RestartedNacsmd | Algorithm::RestartedAcsmd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultRule {
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DegreeSpec {
    Value(f64),
    Rule(DefaultRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetRule {
    /// The offset the convergence guarantees are stated with.
    Default,
    /// `max(1, (L/μ)^{1/q})`.
    Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetSpec {
    Value(f64),
    Rule(OffsetRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoRule {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SafetySpec {
    Value(f64),
    Rule(AutoRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// Exact `sqrt(E‖G − ∇F‖₂²)` at `x_1`.
    Auto,
    /// The declared level `d^{2/p}σ_b² + 2d²R²`.
    Declared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Value(f64),
    Rule(SigmaRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub label: String,
    pub algorithm: Algorithm,
    #[serde(default = "default_degree_spec")]
    pub degree: DegreeSpec,
    #[serde(default = "default_offset_spec")]
    pub offset: OffsetSpec,
    #[serde(default = "auto_safety")]
    pub safety_scale: SafetySpec,
    /// Noise level given to the AC-SA baseline.
    #[serde(default = "auto_sigma")]
    pub sigma: SigmaSpec,
}

fn default_degree_spec() -> DegreeSpec {
    DegreeSpec::Rule(DefaultRule::Default)
}
fn default_offset_spec() -> OffsetSpec {
    OffsetSpec::Rule(OffsetRule::Default)
}
fn auto_safety() -> SafetySpec {
    SafetySpec::Rule(AutoRule::Auto)
}
fn auto_sigma() -> SigmaSpec {
    SigmaSpec::Rule(SigmaRule::Auto)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RestartSpec {
    Rule(AutoRule),
    Plan { n: usize, k: usize, t: usize },
}

impl Default for RestartSpec {
    fn default() -> Self {
        RestartSpec::Rule(AutoRule::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Iteration budget per run.
    pub t_max: usize,
    /// Target relative accuracy `(Ψ(x) − Ψ*)/(Ψ(x_1) − Ψ*)`.
    #[serde(default = "hundredth")]
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    /// Thinning of the written trace files (counts always use every
    /// iteration).
    #[serde(default = "one")]
    pub trace_every: usize,
    /// Plan for the restarted algorithms.
    #[serde(default)]
    pub restart: RestartSpec,
    /// Check the pathwise certificate on the first seed of each
    /// non-restarted cell.
    #[serde(default = "yes")]
    pub certificates: bool,
}

fn hundredth() -> f64 {
    0.01
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub traces: bool,
    #[serde(default = "yes")]
    pub plot: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            traces: true,
            plot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundConfig {
    #[serde(default = "acsmd")]
    pub solver: Target,
    pub mu: f64,
    pub q: f64,
    pub sigma: f64,
    pub epsilon: f64,
    #[serde(default = "half")]
    pub gamma: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn acsmd() -> Target {
    Target::Acsmd
}
fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `β_t = 1`.
    Constant,
    /// `β_t = t`.
    Linear,
}

impl WeightRule {
    pub fn weights(self, horizon: usize) -> Vec<f64> {
        (1..=horizon)
            .map(|t| match self {
                WeightRule::Constant => 1.0,
                WeightRule::Linear => t as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    #[serde(default = "sphere")]
    pub noise: String,
    pub q: f64,
    pub dim: usize,
    #[serde(default = "unit")]
    pub sigma: f64,
    #[serde(default = "unit")]
    pub radius: f64,
    #[serde(default = "both_weights")]
    pub weights: Vec<WeightRule>,
    #[serde(default = "hundred")]
    pub horizon: usize,
    pub trials: usize,
    #[serde(default = "ten")]
    pub grid: usize,
    #[serde(default)]
    pub seed: u64,
}

fn sphere() -> String {
    "bounded_sphere".into()
}
fn unit() -> f64 {
    1.0
}
fn both_weights() -> Vec<WeightRule> {
    vec![WeightRule::Constant, WeightRule::Linear]
}
fn hundred() -> usize {
    100
}
fn ten() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Replaces the seed lists with a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(run) = &mut self.run {
            run.seeds = vec![seed];
        }
        if let Some(lb) = &mut self.lowerbound {
            lb.seed = seed;
        }
        if let Some(c) = &mut self.concentration {
            c.seed = seed;
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> BenchError {
    BenchError::Validation(format!("`{field}`: {reason}"))
}

/// One solver at one grid point, with its resolved schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub id: String,
    pub d: usize,
    pub l_multiplier: f64,
    pub solver: SolverConfig,
    /// Geometry handed to the solver (smoothness already multiplied).
    pub params: GeometryParams,
    pub schedule: Option<StepSchedule>,
}

/// A validated solver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    pub name: String,
    pub instance: InstanceConfig,
    pub run: RunConfig,
    pub output: OutputConfig,
    pub cells: Vec<CellSpec>,
}

fn fmt_multiplier(m: f64) -> String {
    let s = format!("{m}");
    s.replace('.', "p")
}

pub(crate) fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Grid-point part of a cell id, e.g. `d50-L20`.
pub fn point_id(d: usize, l_multiplier: f64) -> String {
    format!("d{d}-L{}", fmt_multiplier(l_multiplier))
}

/// Geometry seen by the solvers on a `d`-dimensional instance.
pub fn solver_geometry(inst: &InstanceConfig, d: usize, l_multiplier: f64) -> Result<GeometryParams, BenchError> {
    let probe = RidgeInstance::new(vec![0.0; d], inst.sigma_b, inst.mu, inst.q).map_err(BenchError::from)?;
    let base = probe.geometry(inst.kappa).map_err(BenchError::from)?;
    let sigma = match inst.noise {
        NoiseModel::Exact => 0.0,
        NoiseModel::Response => GradientOracle::noise_level(&RidgeResponseOracle(probe)),
        NoiseModel::Sample => base.sigma,
    };
    base.with_noise(sigma, base.radius)
        .and_then(|p| p.with_smoothness(p.l * l_multiplier))
        .map_err(BenchError::from)
}

/// Resolved schedule of a solver; `None` for the baseline.
pub fn resolve_schedule(solver: &SolverConfig, params: &GeometryParams) -> Result<Option<StepSchedule>, BenchError> {
    let Some(target) = solver.algorithm.target() else {
        return Ok(None);
    };
    let m = match solver.degree {
        DegreeSpec::Value(m) => m,
        DegreeSpec::Rule(DefaultRule::Default) => default_degree(params, target),
    };
    let offset = match solver.offset {
        OffsetSpec::Value(o) => o,
        OffsetSpec::Rule(OffsetRule::Default) => default_offset(params, target, m),
        OffsetSpec::Rule(OffsetRule::Condition) => (params.l / params.mu).powf(1.0 / params.q).max(1.0),
    };
    let sched = StepSchedule::polynomial(target, m, offset).map_err(BenchError::from)?;
    let sched = match solver.safety_scale {
        SafetySpec::Rule(AutoRule::Auto) => tune_safety(sched, params, TUNING_HORIZON).map_err(BenchError::from)?,
        SafetySpec::Value(s) => {
            let sched = sched.with_safety_scale(s).map_err(BenchError::from)?;
            let report = validate_schedule(&sched, params, TUNING_HORIZON);
            if !report.ok {
                return Err(invalid(
                    "safety_scale",
                    format!(
                        "solver `{}`: schedule violates the step-size conditions at t = {}",
                        solver.label,
                        report.first_violation.unwrap_or(0)
                    ),
                ));
            }
            sched
        }
    };
    Ok(Some(sched))
}

fn check_point(spec: &PointSpec, field: &str, dims: &[usize]) -> Result<(), BenchError> {
    if let PointSpec::Values(v) = spec {
        if dims.iter().any(|&d| d != v.len()) {
            return Err(invalid(field, "explicit vectors need every entry of `dims` to equal their length"));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(invalid(field, "entries must be finite"));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Full validation of the solver grid, including every schedule.
    pub fn grid(&self) -> Result<GridPlan, BenchError> {
        let inst = self.instance.clone().ok_or_else(|| invalid("instance", "missing section"))?;
        let run = self.run.clone().ok_or_else(|| invalid("run", "missing section"))?;
        if self.solver.is_empty() {
            return Err(invalid("solver", "at least one [[solver]] entry is required"));
        }
        if run.seeds.is_empty() {
            return Err(invalid("run.seeds", "must not be empty"));
        }
        if run.t_max == 0 {
            return Err(invalid("run.t_max", "must be >= 1"));
        }
        if !(run.epsilon > 0.0 && run.epsilon < 1.0) {
            return Err(invalid("run.epsilon", "must lie in (0, 1)"));
        }
        if run.trace_every == 0 {
            return Err(invalid("run.trace_every", "must be >= 1"));
        }
        if let RestartSpec::Plan { k, t, .. } = run.restart {
            if k == 0 || t < k {
                return Err(invalid("run.restart", "needs k >= 1 and t >= k"));
            }
        }
        if inst.dims.is_empty() || inst.dims.contains(&0) {
            return Err(invalid("instance.dims", "need at least one dimension, all >= 1"));
        }
        if inst.l_multipliers.is_empty() || !inst.l_multipliers.iter().all(|m| m.is_finite() && *m > 0.0) {
            return Err(invalid("instance.l_multipliers", "need at least one positive multiplier"));
        }
        if !(inst.mu > 0.0) {
            return Err(invalid("instance.mu", "must be > 0"));
        }
        check_point(&inst.x_star, "instance.x_star", &inst.dims)?;
        check_point(&inst.x1, "instance.x1", &inst.dims)?;
        let mut seen = HashSet::new();
        for s in &self.solver {
            if s.label.is_empty() || !seen.insert(sanitize(&s.label)) {
                return Err(invalid("solver.label", format!("labels must be non-empty and distinct (`{}`)", s.label)));
            }
            if let SigmaSpec::Value(v) = s.sigma {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid("solver.sigma", "must be finite and >= 0"));
                }
            }
        }
        let mut cells = Vec::new();
        for &d in &inst.dims {
            for &lm in &inst.l_multipliers {
                let params = solver_geometry(&inst, d, lm)?;
                for s in &self.solver {
                    let schedule = resolve_schedule(s, &params)?;
                    cells.push(CellSpec {
                        id: format!("{}-{}", point_id(d, lm), sanitize(&s.label)),
                        d,
                        l_multiplier: lm,
                        solver: s.clone(),
                        params,
                        schedule,
                    });
                }
            }
        }
        Ok(GridPlan {
            name: self.name.clone(),
            instance: inst,
            run,
            output: self.output.clone(),
            cells,
        })
    }

    pub fn lowerbound_section(&self) -> Result<LowerBoundConfig, BenchError> {
        let lb = self.lowerbound.clone().ok_or_else(|| invalid("lowerbound", "missing section"))?;
        if lb.trials == 0 {
            return Err(invalid("lowerbound.trials", "must be >= 1"));
        }
        if !(lb.gamma > 0.0 && lb.gamma < 1.0) {
            return Err(invalid("lowerbound.gamma", "must lie in (0, 1)"));
        }
        compsmd::oracles::BernoulliInstance::new(lb.mu, lb.q, lb.sigma, lb.epsilon).map_err(BenchError::from)?;
        Ok(lb)
    }

    pub fn concentration_section(&self) -> Result<(ConcentrationConfig, NoiseKind), BenchError> {
        let c = self.concentration.clone().ok_or_else(|| invalid("concentration", "missing section"))?;
        let noise: NoiseKind = c.noise.parse().map_err(BenchError::from)?;
        if matches!(noise, NoiseKind::HeavyTailPareto { .. }) {
            return Err(invalid("concentration.noise", "heavy-tailed noise has no exponential moment"));
        }
        if c.dim == 0 || c.horizon == 0 || c.trials == 0 || c.grid < 2 {
            return Err(invalid("concentration", "dim, horizon, trials must be >= 1 and grid >= 2"));
        }
        if c.weights.is_empty() {
            return Err(invalid("concentration.weights", "must not be empty"));
        }
        if !(c.q >= 2.0 && c.sigma > 0.0 && c.radius > 0.0) {
            return Err(invalid("concentration", "need q >= 2, sigma > 0, radius > 0"));
        }
        Ok((c, noise))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
        name = "t"
        [instance]
        dims = [5, 8]
        q = 4.0
        x_star = "uniform"
        l_multipliers = [1.0, 2.5]

        [[solver]]
        label = "Lan"
        algorithm = "acsa"

        [[solver]]
        label = "ACSMD1"
        algorithm = "acsmd"
        degree = 1.0
        offset = "condition"

        [run]
        t_max = 50
        seeds = [1, 2]
    "#;

    #[test]
    fn parses_and_resolves_grid() {
        let cfg = ExperimentConfig::from_toml(GRID).unwrap();
        let grid = cfg.grid().unwrap();
        assert_eq!(grid.cells.len(), 8);
        assert_eq!(grid.cells[1].id, "d5-L1-ACSMD1");
        assert_eq!(grid.cells[3].id, "d5-L2p5-ACSMD1");
        assert!(grid.cells[0].schedule.is_none());
        let sched = grid.cells[1].schedule.as_ref().unwrap();
        assert_eq!(sched.degree(), Some(1.0));
        assert_eq!(grid.cells[3].params.l, 2.5 * grid.cells[1].params.l);
        assert_eq!(grid.run.epsilon, 0.01);
        assert_eq!(grid.instance.noise, NoiseModel::Response);
    }

    #[test]
    fn rejects_bad_configs() {
        let empty = GRID.replace("seeds = [1, 2]", "seeds = []");
        assert!(matches!(
            ExperimentConfig::from_toml(&empty).unwrap().grid(),
            Err(BenchError::Validation(m)) if m.contains("seeds")
        ));
        let typo = GRID.replace("t_max = 50", "tmax = 50");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
        let dup = GRID.replace("label = \"Lan\"", "label = \"ACSMD1\"");
        assert!(ExperimentConfig::from_toml(&dup).unwrap().grid().is_err());
        let bad_q = GRID.replace("q = 4.0", "q = 1.5");
        assert!(ExperimentConfig::from_toml(&bad_q).unwrap().grid().is_err());
        let tiny = GRID.replace("offset = \"condition\"", "offset = \"condition\"\nsafety_scale = 1e-6");
        assert!(ExperimentConfig::from_toml(&tiny).unwrap().grid().is_err());
    }

    #[test]
    fn seed_override_and_sections() {
        let mut cfg = ExperimentConfig::from_toml(GRID).unwrap();
        cfg.override_seed(9);
        assert_eq!(cfg.run.as_ref().unwrap().seeds, vec![9]);
        assert!(cfg.lowerbound_section().is_err());
        let lb = ExperimentConfig::from_toml(
            "[lowerbound]\nmu = 1.0\nq = 2.0\nsigma = 1.0\nepsilon = 0.05\ntrials = 10\n",
        )
        .unwrap();
        assert_eq!(lb.lowerbound_section().unwrap().solver, Target::Acsmd);
        assert!(lb.grid().is_err());
    }
}

//! Stochastic first-order oracles: `G(x, ξ)` with `E G = ∇F(x)` and a
//! bounded p-th centred moment in the dual norm.
//!
//! Oracles are immutable; every draw takes the caller's RNG stream.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::{dual_exponent, dual_norm, lq_norm, lq_norm_pow, GeometryParams};
use crate::linalg::{dot, sub};
use crate::regularizers::Regularizer;
use crate::rng::{substream, SimRng};

pub trait GradientOracle: Send + Sync {
    fn dimension(&self) -> usize;

    /// One stochastic gradient `G(x, ξ)`.
    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Vec<f64>;

    /// Exact `∇F(x)`, when the oracle can reveal it (diagnostics only).
    fn mean_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact `F(x)`, when known.
    fn objective(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Declared `σ` of the moment bound.
    fn noise_level(&self) -> f64;

    /// Exponent `p` of the moment bound.
    fn noise_moment_exponent(&self) -> f64;
}

impl<T: GradientOracle + ?Sized> GradientOracle for Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        (**self).sample_gradient(x, rng)
    }
    fn mean_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).mean_gradient(x)
    }
    fn objective(&self, x: &[f64]) -> Option<f64> {
        (**self).objective(x)
    }
    fn noise_level(&self) -> f64 {
        (**self).noise_level()
    }
    fn noise_moment_exponent(&self) -> f64 {
        (**self).noise_moment_exponent()
    }
}

// ---------------------------------------------------------------------------
// Generalized ridge regression
// ---------------------------------------------------------------------------

/// `min E(aᵀx − b)² + (μ/q)‖x‖_q^q` with `a ~ U([-1,1]^d)` and
/// `b = aᵀx⋆ + N(0, σ_b²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeInstance {
    pub x_star: Vec<f64>,
    pub sigma_b: f64,
    pub mu: f64,
    pub q: f64,
}

impl RidgeInstance {
    pub fn new(x_star: Vec<f64>, sigma_b: f64, mu: f64, q: f64) -> Result<Self> {
        if x_star.is_empty() {
            return Err(Error::param("d", "dimension must be >= 1"));
        }
        if !x_star.iter().all(|v| v.is_finite()) {
            return Err(Error::param("x_star", "entries must be finite"));
        }
        if !(sigma_b.is_finite() && sigma_b >= 0.0) {
            return Err(Error::param("sigma_b", format!("must be >= 0, got {sigma_b}")));
        }
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::param("mu", format!("must be >= 0, got {mu}")));
        }
        if !(q.is_finite() && q >= 2.0) {
            return Err(Error::param("q", format!("must be >= 2, got {q}")));
        }
        Ok(Self { x_star, sigma_b, mu, q })
    }

    pub fn dimension(&self) -> usize {
        self.x_star.len()
    }

    /// Smoothness of `F` in `‖·‖_q` with exponent 2: `(2/3) d^{1−2/q}`.
    pub fn smoothness(&self) -> f64 {
        2.0 / 3.0 * (self.dimension() as f64).powf(1.0 - 2.0 / self.q)
    }

    /// Strong convexity of `F` alone (Euclidean).
    pub fn mu_f(&self) -> f64 {
        2.0 / 3.0
    }

    /// Smallest `L` for which `F(x) − F(y) − ⟨∇F(y), x−y⟩ ≤ (M/(qδ^r))‖x−y‖_q^q + Lδ`
    /// holds for every pair and every `δ ∈ (0, 1]`.
    ///
    /// For `κ = 2` this is [`Self::smoothness`]. For `κ < 2` the quadratic
    /// `F` is not globally `(L, κ)`-weakly smooth, but the solvers only use
    /// the bound above with `δ_t ≤ 1`, which both step-size configurations
    /// guarantee.
    pub fn smoothness_for(&self, kappa: f64) -> f64 {
        let lq = self.smoothness();
        let q = self.q;
        if kappa >= 2.0 {
            return lq;
        }
        let a = lq / 2.0;
        let r = (q - kappa) / kappa;
        let c = (r / q).powf(r);
        if q == 2.0 {
            2.0 * a / c
        } else {
            // worst case over δ is δ = 1 because 2r/(q−2) ≥ 1 when κ ≤ 2
            (a * (1.0 - 2.0 / q) * (2.0 * a / c).powf(2.0 / (q - 2.0))).powf((q - 2.0) / q)
        }
    }

    pub fn regularizer(&self) -> Result<Regularizer> {
        Regularizer::power_norm(self.mu, self.q, self.dimension())
    }

    /// Geometry of the instance for weak-smoothness exponent `kappa`; `mu`
    /// is the modulus of the regularizer in `‖·‖_q`.
    pub fn geometry(&self, kappa: f64) -> Result<GeometryParams> {
        let reg = self.regularizer()?;
        GeometryParams::derive(self.q, kappa, self.smoothness_for(kappa), reg.modulus())?
            .with_noise(self.declared_noise_level(self.default_radius()), self.default_radius())
    }

    /// `2‖x⋆‖_q`, or 1 when `x⋆ = 0`.
    pub fn default_radius(&self) -> f64 {
        let n = lq_norm(&self.x_star, self.q);
        if n > 0.0 {
            2.0 * n
        } else {
            1.0
        }
    }

    /// Noise level used for step-size purposes: `d^{2/p}σ_b² + 2d²R²`.
    pub fn declared_noise_level(&self, radius: f64) -> f64 {
        let d = self.dimension() as f64;
        let p = dual_exponent(self.q);
        d.powf(2.0 / p) * self.sigma_b * self.sigma_b + 2.0 * d * d * radius * radius
    }

    /// `F(x) = (1/3)‖x − x⋆‖² + σ_b²`.
    pub fn loss(&self, x: &[f64]) -> f64 {
        let e = sub(x, &self.x_star);
        dot(&e, &e) / 3.0 + self.sigma_b * self.sigma_b
    }

    /// `E‖G(x) − ∇F(x)‖₂²` of the single-sample oracle, in closed form:
    /// `4‖e‖²(1/5 + (d−1)/9) − (4/9)‖e‖² + (4/3)dσ_b²` with `e = x − x⋆`.
    pub fn noise_second_moment(&self, x: &[f64]) -> f64 {
        let d = self.dimension() as f64;
        let e = sub(x, &self.x_star);
        let e2 = dot(&e, &e);
        4.0 * e2 * (0.2 + (d - 1.0) / 9.0) - 4.0 / 9.0 * e2 + 4.0 / 3.0 * d * self.sigma_b * self.sigma_b
    }

    pub fn loss_gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_star).map(|(a, b)| 2.0 / 3.0 * (a - b)).collect()
    }
}

impl GradientOracle for RidgeInstance {
    fn dimension(&self) -> usize {
        self.x_star.len()
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let a: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let xi = if self.sigma_b > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            self.sigma_b * z
        } else {
            0.0
        };
        let b = dot(&a, &self.x_star) + xi;
        let resid = 2.0 * (dot(&a, x) - b);
        a.iter().map(|v| resid * v).collect()
    }

    fn mean_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.loss_gradient(x))
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(self.loss(x))
    }

    fn noise_level(&self) -> f64 {
        self.declared_noise_level(self.default_radius())
    }

    fn noise_moment_exponent(&self) -> f64 {
        dual_exponent(self.q)
    }
}

/// Ridge oracle whose randomness comes from the response only:
/// `G(x) = ∇F(x) − 2ξa` with a fresh `a ~ U([-1,1]^d)` and `ξ ~ N(0, σ_b²)`.
///
/// Unlike the single-sample oracle its error does not grow with
/// `‖x − x⋆‖`, so iteration counts do not scale with `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeResponseOracle(pub RidgeInstance);

impl RidgeResponseOracle {
    /// `E‖G − ∇F‖₂² = (4/3) d σ_b²`.
    pub fn euclidean_noise_std(&self) -> f64 {
        2.0 * self.0.sigma_b * (self.0.dimension() as f64 / 3.0).sqrt()
    }
}

impl GradientOracle for RidgeResponseOracle {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let z: f64 = StandardNormal.sample(rng);
        let xi = self.0.sigma_b * z;
        self.0
            .loss_gradient(x)
            .into_iter()
            .map(|g| {
                let a: f64 = rng.random_range(-1.0..=1.0);
                g - 2.0 * xi * a
            })
            .collect()
    }

    fn mean_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.0.loss_gradient(x))
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(self.0.loss(x))
    }

    fn noise_level(&self) -> f64 {
        let d = self.0.dimension() as f64;
        let p = dual_exponent(self.0.q);
        2.0 * self.0.sigma_b * d.powf(1.0 / p)
    }

    fn noise_moment_exponent(&self) -> f64 {
        dual_exponent(self.0.q)
    }
}

// ---------------------------------------------------------------------------
// Bernoulli lower-bound instance
// ---------------------------------------------------------------------------

/// One-dimensional hard instance `f_ν(x, b) = ν b C x` with
/// `b ∈ {0, 1/s}`, `P(b = 1/s) = s`, and regularizer `(μ/q)|x|^q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliInstance {
    pub mu: f64,
    pub q: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub c: f64,
    pub s: f64,
}

impl BernoulliInstance {
    pub fn new(mu: f64, q: f64, sigma: f64, epsilon: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::param("mu", "must be > 0"));
        }
        if !(q >= 2.0 && q.is_finite()) {
            return Err(Error::param("q", "must be >= 2"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", "must be > 0"));
        }
        let p = dual_exponent(q);
        let cap = sigma.powf(p) / (2.0 * p * mu.powf(p - 1.0));
        if !(epsilon > 0.0 && epsilon <= cap) {
            return Err(Error::param(
                "epsilon",
                format!("requires 0 < ε ≤ σ^p/(2p μ^(p−1)) = {cap}, got {epsilon}"),
            ));
        }
        let c = mu.powf(1.0 / q) * (epsilon * p).powf(1.0 / p);
        let target = (2.0 * p * mu.powf(p - 1.0) * epsilon / sigma.powf(p)).powf(1.0 / (p - 1.0));
        let s = solve_success_probability(p, target);
        Ok(Self { mu, q, sigma, epsilon, c, s })
    }

    pub fn p(&self) -> f64 {
        dual_exponent(self.q)
    }

    /// Draws the hidden sign `ν` uniformly from `{−1, +1}`.
    pub fn draw(&self, nu_seed: u64) -> (BernoulliOracle, HiddenSign) {
        let mut rng = substream(nu_seed, u64::MAX);
        let nu = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        (self.with_sign(nu), HiddenSign(nu))
    }

    pub fn with_sign(&self, nu: f64) -> BernoulliOracle {
        BernoulliOracle {
            instance: self.clone(),
            nu: nu.signum(),
        }
    }

    pub fn regularizer(&self) -> Result<Regularizer> {
        Regularizer::power_norm(self.mu, self.q, 1)
    }

    /// `(μ/q)|x|^q + νCx` minimiser: `−ν (C/μ)^{1/(q−1)}`.
    pub fn optimum(&self, nu: f64) -> f64 {
        -nu.signum() * (self.c / self.mu).powf(1.0 / (self.q - 1.0))
    }

    /// Objective `νCx + (μ/q)|x|^q`.
    pub fn psi(&self, nu: f64, x: f64) -> f64 {
        nu * self.c * x + self.mu / self.q * x.abs().powf(self.q)
    }

    pub fn suboptimality(&self, nu: f64, x: f64) -> f64 {
        self.psi(nu, x) - self.psi(nu, self.optimum(nu))
    }

    /// `C^p (1−s)(1 + ((1−s)/s)^{p−1})`, the exact centred p-th moment.
    pub fn centered_moment(&self) -> f64 {
        let p = self.p();
        let s = self.s;
        self.c.powf(p) * (1.0 - s) * (1.0 + ((1.0 - s) / s).powf(p - 1.0))
    }

    /// Query budget below which every method fails with probability at
    /// least `1 − γ`: `(1/(2p^{q−1})) (σ/μ)(σ/ε)^{q−1} ln(1/(1−γ))`.
    pub fn query_bound(&self, gamma: f64) -> f64 {
        let p = self.p();
        let q = self.q;
        1.0 / (2.0 * p.powf(q - 1.0)) * (self.sigma / self.mu)
            * (self.sigma / self.epsilon).powf(q - 1.0)
            * (1.0 / (1.0 - gamma)).ln()
    }
}

/// Unique root in (0, 1) of `s^{p−1}/(1−s)^p = target`.
fn solve_success_probability(p: f64, target: f64) -> f64 {
    let f = |s: f64| s.powf(p - 1.0) / (1.0 - s).powf(p) - target;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The sign of a Bernoulli instance, kept away from the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenSign(f64);

impl HiddenSign {
    pub fn reveal(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct BernoulliOracle {
    instance: BernoulliInstance,
    nu: f64,
}

impl BernoulliOracle {
    pub fn instance(&self) -> &BernoulliInstance {
        &self.instance
    }
}

impl GradientOracle for BernoulliOracle {
    fn dimension(&self) -> usize {
        1
    }

    fn sample_gradient(&self, _x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let s = self.instance.s;
        let b = if rng.random_bool(s) { 1.0 / s } else { 0.0 };
        vec![self.nu * b * self.instance.c]
    }

    fn mean_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.nu * self.instance.c])
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(self.nu * self.instance.c * x[0])
    }

    fn noise_level(&self) -> f64 {
        self.instance.sigma
    }

    fn noise_moment_exponent(&self) -> f64 {
        self.instance.p()
    }
}

// ---------------------------------------------------------------------------
// Additive noise around a deterministic gradient map
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `Δ = s z`, `z ~ N(0, I)`, scaled so `E‖Δ‖_*^p = σ^p`.
    Gaussian,
    /// Uniform direction with `‖Δ‖_* = σ` exactly.
    BoundedSphere,
    /// Uniform direction with Pareto(`tail_index`) magnitude, scaled so
    /// `E‖Δ‖_*^p = σ^p`; requires `tail_index > p`.
    HeavyTailPareto { tail_index: f64 },
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::Gaussian => write!(f, "gaussian"),
            NoiseKind::BoundedSphere => write!(f, "bounded_sphere"),
            NoiseKind::HeavyTailPareto { tail_index } => write!(f, "heavy_tail_pareto:{tail_index}"),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "bounded_sphere" => Ok(NoiseKind::BoundedSphere),
            other => {
                if let Some(rest) = other.strip_prefix("heavy_tail_pareto:") {
                    let tail_index = rest
                        .parse::<f64>()
                        .map_err(|_| Error::param("noise", format!("bad tail index `{rest}`")))?;
                    Ok(NoiseKind::HeavyTailPareto { tail_index })
                } else {
                    Err(Error::param("noise", format!("unknown noise kind `{other}`")))
                }
            }
        }
    }
}

/// `E|z|^p` for a standard normal `z`.
fn normal_abs_moment(p: f64) -> f64 {
    2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

/// Slack applied to calibrated mgf levels so the bound `≤ 2` survives
/// floating-point rounding.
const MGF_SLACK: f64 = 1e-12;

pub type GradientMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ValueMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `∇F(x) + Δ` with `Δ` i.i.d. from a [`NoiseKind`].
#[derive(Clone)]
pub struct AdditiveNoiseOracle {
    dimension: usize,
    q: f64,
    gradient: GradientMap,
    value: Option<ValueMap>,
    noise: NoiseKind,
    sigma: f64,
    /// multiplier turning a unit-norm direction into Δ, per family
    scale: f64,
}

impl fmt::Debug for AdditiveNoiseOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdditiveNoiseOracle")
            .field("dimension", &self.dimension)
            .field("q", &self.q)
            .field("noise", &self.noise)
            .field("sigma", &self.sigma)
            .finish()
    }
}

impl AdditiveNoiseOracle {
    /// `q` fixes the primal norm; noise is measured in its dual.
    pub fn new(dimension: usize, q: f64, gradient: GradientMap, noise: NoiseKind, sigma: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::param("dimension", "must be positive"));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::param("sigma", format!("must be >= 0, got {sigma}")));
        }
        let p = dual_exponent(q);
        let scale = match noise {
            NoiseKind::Gaussian => sigma / (dimension as f64 * normal_abs_moment(p)).powf(1.0 / p),
            NoiseKind::BoundedSphere => sigma,
            NoiseKind::HeavyTailPareto { tail_index } => {
                if !(tail_index > p) {
                    return Err(Error::param(
                        "noise",
                        format!("pareto tail index must exceed p = {p} for a finite p-th moment, got {tail_index}"),
                    ));
                }
                sigma / (tail_index / (tail_index - p)).powf(1.0 / p)
            }
        };
        Ok(Self {
            dimension,
            q,
            gradient,
            value: None,
            noise,
            sigma,
            scale,
        })
    }

    /// Wraps a ridge instance's exact gradient and loss.
    pub fn around_ridge(instance: &RidgeInstance, noise: NoiseKind, sigma: f64) -> Result<Self> {
        let g = instance.clone();
        let v = instance.clone();
        Ok(Self::new(
            instance.dimension(),
            instance.q,
            Arc::new(move |x: &[f64]| g.loss_gradient(x)),
            noise,
            sigma,
        )?
        .with_objective(Arc::new(move |x: &[f64]| v.loss(x))))
    }

    pub fn with_objective(mut self, value: ValueMap) -> Self {
        self.value = Some(value);
        self
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    /// A level `σ'` with `E exp(‖Δ‖_*^p / σ'^p) ≤ 2`, or `None` when the
    /// family has no finite exponential moment.
    pub fn mgf_level(&self) -> Option<f64> {
        let p = dual_exponent(self.q);
        if self.sigma == 0.0 {
            return Some(0.0);
        }
        match self.noise {
            NoiseKind::BoundedSphere => Some(self.sigma / std::f64::consts::LN_2.powf(1.0 / p) * (1.0 + MGF_SLACK)),
            NoiseKind::Gaussian => Some(gaussian_mgf_level(self.scale, p, self.dimension) * (1.0 + MGF_SLACK)),
            NoiseKind::HeavyTailPareto { .. } => None,
        }
    }

    /// One noise vector `Δ`.
    pub fn sample_noise(&self, rng: &mut SimRng) -> Vec<f64> {
        if self.sigma == 0.0 {
            return vec![0.0; self.dimension];
        }
        let p = dual_exponent(self.q);
        match self.noise {
            NoiseKind::Gaussian => (0..self.dimension)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    self.scale * z
                })
                .collect(),
            NoiseKind::BoundedSphere => {
                let u = unit_direction(self.dimension, p, rng);
                u.iter().map(|v| self.scale * v).collect()
            }
            NoiseKind::HeavyTailPareto { tail_index } => {
                let u = unit_direction(self.dimension, p, rng);
                let uni: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let mag = uni.powf(-1.0 / tail_index);
                u.iter().map(|v| self.scale * mag * v).collect()
            }
        }
    }
}

/// Gaussian direction normalised to unit `ℓ_p` norm (symmetric, so mean 0).
fn unit_direction(d: usize, p: f64, rng: &mut SimRng) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = lq_norm(&u, p);
        if n > 1e-300 {
            return u.iter().map(|v| v / n).collect();
        }
    }
}

/// Solves `(E exp(s^p |z|^p / τ^p))^d = 2` for `τ`, with the expectation by
/// Simpson quadrature over `z ∈ [−12, 12]`.
fn gaussian_mgf_level(s: f64, p: f64, d: usize) -> f64 {
    let log_mgf = |tau: f64| {
        let n = 4000;
        let (a, b) = (-12.0_f64, 12.0_f64);
        let h = (b - a) / n as f64;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let f = |z: f64| {
            let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let _ = &normal;
            (s.powf(p) * z.abs().powf(p) / tau.powf(p)).exp() * density
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + h * i as f64);
        }
        d as f64 * (acc * h / 3.0).ln()
    };
    let target = std::f64::consts::LN_2;
    // log_mgf decreases in τ
    let mut hi = s.max(1e-300);
    while !(log_mgf(hi) <= target) {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while log_mgf(lo) <= target && lo > 1e-300 {
        lo /= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_mgf(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

impl GradientOracle for AdditiveNoiseOracle {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let g = (self.gradient)(x);
        let noise = self.sample_noise(rng);
        g.iter().zip(noise).map(|(a, b)| a + b).collect()
    }

    fn mean_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some((self.gradient)(x))
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        self.value.as_ref().map(|f| f(x))
    }

    fn noise_level(&self) -> f64 {
        self.sigma
    }

    fn noise_moment_exponent(&self) -> f64 {
        dual_exponent(self.q)
    }
}

/// Empirical `(1/N) Σ ‖G(x, ξ_i) − ∇F(x)‖_*^p` over `n` draws.
pub fn empirical_noise_moment<O: GradientOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    q: f64,
    n: usize,
    rng: &mut SimRng,
) -> Option<f64> {
    let mean = oracle.mean_gradient(x)?;
    let p = dual_exponent(q);
    let total: f64 = (0..n)
        .map(|_| {
            let g = oracle.sample_gradient(x, rng);
            dual_norm(&sub(&g, &mean), q).powf(p)
        })
        .sum();
    Some(total / n as f64)
}

/// `‖x‖_q^q`-free helper used by tests of the sphere family.
pub fn dual_norm_pow(g: &[f64], q: f64) -> f64 {
    lq_norm_pow(g, dual_exponent(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ridge(sigma_b: f64) -> RidgeInstance {
        RidgeInstance::new(vec![1.0, -0.5, 0.25, 2.0], sigma_b, 2.0, 4.0).unwrap()
    }

    #[test]
    fn ridge_mean_and_loss() {
        let inst = ridge(0.1);
        let x = [0.3, 0.1, -1.0, 0.0];
        let g = inst.mean_gradient(&x).unwrap();
        for j in 0..4 {
            assert_relative_eq!(g[j], 2.0 / 3.0 * (x[j] - inst.x_star[j]));
        }
        assert_relative_eq!(inst.loss(&inst.x_star), 0.01);
        assert_relative_eq!(inst.smoothness(), 2.0 / 3.0 * 2.0);
    }

    #[test]
    fn ridge_is_unbiased_at_truth() {
        let inst = ridge(0.0);
        let mut rng = substream(5, 0);
        let n = 100_000;
        let mut acc = vec![0.0; 4];
        for _ in 0..n {
            let g = inst.sample_gradient(&inst.x_star, &mut rng);
            for j in 0..4 {
                acc[j] += g[j];
            }
        }
        let mean: Vec<f64> = acc.iter().map(|v| v / n as f64).collect();
        assert!(crate::linalg::norm2(&mean) <= 0.02, "{mean:?}");
    }

    #[test]
    fn sample_oracle_second_moment_closed_form() {
        let inst = ridge(0.3);
        let x = [0.0, 1.0, -1.0, 0.5];
        let mg = inst.mean_gradient(&x).unwrap();
        let mut rng = substream(8, 0);
        let n = 400_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let e = sub(&inst.sample_gradient(&x, &mut rng), &mg);
            sq += dot(&e, &e);
        }
        assert_relative_eq!(sq / n as f64, inst.noise_second_moment(&x), max_relative = 0.01);
    }

    #[test]
    fn response_oracle_noise_matches_its_variance() {
        let o = RidgeResponseOracle(ridge(0.1));
        let x = [0.5, 0.5, 0.5, 0.5];
        let mg = o.mean_gradient(&x).unwrap();
        let mut rng = substream(6, 0);
        let n = 200_000;
        let mut mean = vec![0.0; 4];
        let mut sq = 0.0;
        for _ in 0..n {
            let g = o.sample_gradient(&x, &mut rng);
            let e = sub(&g, &mg);
            sq += dot(&e, &e);
            for j in 0..4 {
                mean[j] += e[j] / n as f64;
            }
        }
        assert!(crate::linalg::norm2(&mean) < 2e-3);
        assert_relative_eq!((sq / n as f64).sqrt(), o.euclidean_noise_std(), max_relative = 0.01);
    }

    #[test]
    fn ridge_smoothness_for_fractional_kappa() {
        let inst = RidgeInstance::new(vec![0.0; 4], 0.0, 1.0, 3.0).unwrap();
        let lq = inst.smoothness();
        let l = inst.smoothness_for(1.5);
        assert_relative_eq!(l, 1.5f64.powf(1.0 / 3.0) * lq, max_relative = 1e-12);
        assert_eq!(inst.smoothness_for(2.0), lq);
        // brute force: the inexact-gradient bound holds for δ ≤ 1 on a grid
        let params = GeometryParams::derive(3.0, 1.5, l, 1.0).unwrap();
        let a = lq / 2.0;
        for i in 1..=200 {
            let delta = i as f64 / 200.0;
            for k in 0..=400 {
                let s = 10f64.powf(-3.0 + 7.0 * k as f64 / 400.0);
                let rhs = crate::geometry::young_gap_bound_at(&params, s, delta).unwrap();
                assert!(a * s * s <= rhs * (1.0 + 1e-12), "δ={delta} s={s}");
            }
        }
        let inst2 = RidgeInstance::new(vec![0.0; 4], 0.0, 1.0, 2.0).unwrap();
        let l2 = inst2.smoothness_for(1.5);
        let p2 = GeometryParams::derive(2.0, 1.5, l2, 1.0).unwrap();
        for k in 0..=400 {
            let s = 10f64.powf(-3.0 + 7.0 * k as f64 / 400.0);
            let rhs = crate::geometry::young_gap_bound_at(&p2, s, 1.0).unwrap();
            assert!(inst2.smoothness() / 2.0 * s * s <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bernoulli_constants() {
        let inst = BernoulliInstance::new(1.0, 2.0, 1.0, 0.1).unwrap();
        assert_relative_eq!(inst.c, 0.2f64.sqrt(), epsilon = 1e-14);
        // closed-form root of 0.4 s² − 1.8 s + 0.4 = 0
        let s_exact = (1.8 - (1.8f64 * 1.8 - 4.0 * 0.4 * 0.4).sqrt()) / 0.8;
        assert_relative_eq!(inst.s, s_exact, epsilon = 1e-12);
        assert_relative_eq!(inst.s / (1.0 - inst.s).powi(2), 0.4, epsilon = 1e-12);
        assert!(inst.centered_moment() <= 1.0);
        // ε-level sets of ν = ±1 are disjoint: the gap at 0 equals ε
        let gap0 = inst.suboptimality(1.0, 0.0);
        assert_relative_eq!(gap0, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_precondition() {
        // σ^p/(2pμ^{p−1}) = 1/4 for q = 2, μ = σ = 1
        assert!(BernoulliInstance::new(1.0, 2.0, 1.0, 0.25).is_ok());
        let err = BernoulliInstance::new(1.0, 2.0, 1.0, 0.3).unwrap_err();
        assert!(matches!(err, Error::Parameter { field: "epsilon", .. }));
    }

    #[test]
    fn bernoulli_moment_monte_carlo() {
        let inst = BernoulliInstance::new(1.0, 2.0, 1.0, 0.1).unwrap();
        let (oracle, nu) = inst.draw(3);
        let mut rng = substream(9, 1);
        let m = empirical_noise_moment(&oracle, &[0.0], 2.0, 1_000_000, &mut rng).unwrap();
        assert!(m <= 1.0 * 1.02, "{m}");
        assert_relative_eq!(m, inst.centered_moment(), max_relative = 0.02);
        assert!(nu.reveal() == 1.0 || nu.reveal() == -1.0);
    }

    #[test]
    fn noise_kind_parsing() {
        assert_eq!("gaussian".parse::<NoiseKind>().unwrap(), NoiseKind::Gaussian);
        assert_eq!("bounded_sphere".parse::<NoiseKind>().unwrap(), NoiseKind::BoundedSphere);
        assert_eq!(
            "heavy_tail_pareto:3.5".parse::<NoiseKind>().unwrap(),
            NoiseKind::HeavyTailPareto { tail_index: 3.5 }
        );
        assert!("cauchy".parse::<NoiseKind>().is_err());
        for k in [NoiseKind::Gaussian, NoiseKind::BoundedSphere, NoiseKind::HeavyTailPareto { tail_index: 2.5 }] {
            assert_eq!(k.to_string().parse::<NoiseKind>().unwrap(), k);
        }
    }

    #[test]
    fn zero_sigma_is_deterministic() {
        let inst = ridge(0.0);
        let o = AdditiveNoiseOracle::around_ridge(&inst, NoiseKind::Gaussian, 0.0).unwrap();
        let mut rng = substream(1, 1);
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(o.sample_gradient(&x, &mut rng), inst.loss_gradient(&x));
    }

    #[test]
    fn sphere_noise_norm_and_mgf() {
        let inst = ridge(0.0);
        let o = AdditiveNoiseOracle::around_ridge(&inst, NoiseKind::BoundedSphere, 0.7).unwrap();
        let mut rng = substream(2, 0);
        let p = dual_exponent(4.0);
        let level = o.mgf_level().unwrap();
        let mut mgf = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let d = o.sample_noise(&mut rng);
            let nd = dual_norm(&d, 4.0);
            assert!(nd <= 0.7 * (1.0 + 1e-12));
            mgf += (nd.powf(p) / level.powf(p)).exp();
        }
        assert!(mgf / n as f64 <= 2.0);
    }

    #[test]
    fn gaussian_noise_moment_calibrated() {
        let o = AdditiveNoiseOracle::new(1, 2.5, Arc::new(|x: &[f64]| vec![0.0; x.len()]), NoiseKind::Gaussian, 1.3)
            .unwrap();
        let mut rng = substream(4, 0);
        let m = empirical_noise_moment(&o, &[0.0], 2.5, 1_000_000, &mut rng).unwrap();
        let p = dual_exponent(2.5);
        assert_relative_eq!(m, 1.3f64.powf(p), max_relative = 0.02);
    }

    #[test]
    fn gaussian_mgf_level_matches_closed_form_at_p2() {
        // p = 2: E exp(s² z² / τ²) = (1 − 2s²/τ²)^{-1/2}; equals 2^{1/d} at τ² = 2s²/(1 − 4^{−1/d})
        let s = 0.8;
        for d in [1usize, 3] {
            let tau = gaussian_mgf_level(s, 2.0, d);
            let expected = (2.0 * s * s / (1.0 - 4f64.powf(-1.0 / d as f64))).sqrt();
            assert_relative_eq!(tau, expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn pareto_requires_finite_moment() {
        let g: GradientMap = Arc::new(|x: &[f64]| vec![0.0; x.len()]);
        assert!(AdditiveNoiseOracle::new(2, 2.0, g.clone(), NoiseKind::HeavyTailPareto { tail_index: 1.5 }, 1.0).is_err());
        let o = AdditiveNoiseOracle::new(2, 2.0, g, NoiseKind::HeavyTailPareto { tail_index: 4.0 }, 1.0).unwrap();
        assert!(o.mgf_level().is_none());
    }
}

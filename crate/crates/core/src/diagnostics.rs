//! Evaluators run over completed traces and Monte Carlo checks of the
//! theory: exact optima, the pathwise certificates of both solvers, the
//! Bernoulli lower-bound experiment and martingale tail bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bregman, dual_exponent, dual_norm, inv_r_power, lq_norm, GeometryParams};
use crate::linalg::{dot, sub};
use crate::oracles::{AdditiveNoiseOracle, BernoulliInstance, GradientOracle, NoiseKind, RidgeInstance};
use crate::regularizers::{bisect_increasing, Regularizer};
use crate::rng::substream;
use crate::solvers::{default_schedule, run, Reference, RunTrace, Target, TraceOptions};

/// Relative tolerance of the certificate inequality.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-6;

/// Minimiser and value of `Ψ = F + H` for a ridge instance, by bisection
/// on each coordinate of `(2/3)(x − x⋆) + μ sign(x)|x|^{q−1} = 0`.
pub fn exact_optimum(instance: &RidgeInstance) -> (Vec<f64>, f64) {
    let (mu, q) = (instance.mu, instance.q);
    let x_opt: Vec<f64> = instance
        .x_star
        .iter()
        .map(|&s| {
            if mu == 0.0 {
                return s;
            }
            let phi = |x: f64| 2.0 / 3.0 * (x - s) + mu * x.signum() * x.abs().powf(q - 1.0);
            // the root lies between 0 and x⋆_j
            bisect_increasing(phi, 1e-15 * (1.0 + s.abs())).unwrap_or(0.0)
        })
        .collect();
    let psi = instance.loss(&x_opt) + mu / q * x_opt.iter().map(|v| v.abs().powf(q)).sum::<f64>();
    (x_opt, psi)
}

/// [`exact_optimum`] packaged for trace annotation.
pub fn ridge_reference(instance: &RidgeInstance) -> Reference {
    let (x_opt, psi_star) = exact_optimum(instance);
    Reference { x_opt, psi_star }
}

/// `‖∇F(x) + ∇H(x)‖_∞` for the ridge objective.
pub fn ridge_optimality_residual(instance: &RidgeInstance, x: &[f64]) -> f64 {
    x.iter()
        .zip(&instance.x_star)
        .map(|(&v, &s)| (2.0 / 3.0 * (v - s) + instance.mu * v.signum() * v.abs().powf(instance.q - 1.0)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub t: usize,
    /// `A_T[Ψ(x^ag_{T+1}) − Ψ(x)] + γ_T D(x, x_{T+1})`.
    pub left: f64,
    /// `γ_1 D(x, x_1)`.
    pub initialization: f64,
    /// `Σ α_t⟨Δ_t, x − x_t⟩`.
    pub martingale: f64,
    /// `Σ 2‖Δ_t‖_*^p/(pμ^{p/q}) (α_t^q/γ_t)^{p/q}`.
    pub noise_moment: f64,
    pub deterministic: f64,
    pub right: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub algorithm: String,
    pub rows: Vec<CertificateRow>,
    pub violations: usize,
    /// Smallest `slack / (1 + |right|)`.
    pub min_relative_slack: f64,
    /// Largest smoothing base `2Mα/(μγ)` (or its accelerated analogue);
    /// must stay ≤ 1 when `r = 0`.
    pub max_smoothing_base: f64,
}

impl CertificateReport {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Evaluates the pathwise certificate of the solver that produced `trace`
/// at the comparison point `x = reference.x_opt`, for every `T`.
///
/// `params.mu` must be the modulus of `h` in `‖·‖_q`. Needs a complete
/// trace with realised noise; otherwise returns
/// [`Error::DiagnosticUnavailable`].
pub fn certificate_check<O: GradientOracle + ?Sized>(
    trace: &RunTrace,
    params: &GeometryParams,
    oracle: &O,
    h: &Regularizer,
    reference: &Reference,
) -> Result<CertificateReport> {
    let target = match trace.algorithm.as_str() {
        "nacsmd" => Target::Nacsmd,
        "acsmd" => Target::Acsmd,
        other => {
            return Err(Error::DiagnosticUnavailable(format!(
                "no certificate for algorithm `{other}`"
            )))
        }
    };
    if trace.is_empty() || !trace.is_complete() {
        return Err(Error::DiagnosticUnavailable(
            "certificate needs every iteration recorded with vectors".into(),
        ));
    }
    let psi = |x: &[f64]| -> Result<f64> {
        oracle
            .objective(x)
            .map(|f| f + h.evaluate(x))
            .ok_or_else(|| Error::DiagnosticUnavailable("oracle does not expose F".into()))
    };
    let x = &reference.x_opt;
    let psi_x = psi(x)?;
    let (q, p, mu, m, r) = (params.q, params.p, params.mu, params.m, params.r);

    let first = trace.records[0].vectors.as_ref().expect("complete trace");
    let initialization = trace.records[0].gamma * bregman(h, x, &first.x);
    let mut martingale = 0.0;
    let mut noise_moment = 0.0;
    let mut deterministic = 0.0;
    let mut rows = Vec::with_capacity(trace.len());
    let mut violations = 0;
    let mut min_rel = f64::INFINITY;
    let mut max_base: f64 = 0.0;

    for rec in &trace.records {
        let v = rec.vectors.as_ref().expect("complete trace");
        let delta = v
            .noise
            .as_ref()
            .ok_or_else(|| Error::DiagnosticUnavailable(format!("no realised noise at t = {}", rec.t)))?;
        let (alpha, gamma, cum) = (rec.alpha, rec.gamma, rec.cum_alpha);
        martingale += alpha * dot(delta, &sub(x, &v.x));
        noise_moment += 2.0 * dual_norm(delta, q).powf(p) / (p * mu.powf(p / q)) * (alpha.powf(q) / gamma).powf(p / q);
        let base = match target {
            Target::Nacsmd => 2.0 * m * alpha / (mu * gamma),
            Target::Acsmd => 2.0 * m * alpha * (alpha / cum).powf(q - 1.0) / (mu * gamma),
        };
        max_base = max_base.max(base);
        let weight = match target {
            Target::Nacsmd => alpha,
            Target::Acsmd => cum,
        };
        let term = params.l * weight * inv_r_power(base, r);
        deterministic += if term.is_nan() { 0.0 } else { term };

        let left = cum * (psi(&v.x_ag)? - psi_x) + gamma * bregman(h, x, &v.x_next);
        let right = initialization + martingale + noise_moment + deterministic;
        let slack = right - left;
        let rel = slack / (1.0 + right.abs());
        if rel < -CERTIFICATE_TOLERANCE {
            violations += 1;
        }
        min_rel = min_rel.min(rel);
        rows.push(CertificateRow {
            t: rec.t,
            left,
            initialization,
            martingale,
            noise_moment,
            deterministic,
            right,
            slack,
        });
    }
    if r == 0.0 && max_base > 1.0 + 1e-12 {
        // the zero convention would have hidden an infinite term
        violations += 1;
    }
    Ok(CertificateReport {
        algorithm: trace.algorithm.clone(),
        rows,
        violations,
        min_relative_slack: min_rel,
        max_smoothing_base: max_base,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    /// Query budget below which accuracy `ε` is out of reach (real-valued).
    pub t_bound: f64,
    /// Iterations actually run: `⌊t_bound⌋`.
    pub t_used: usize,
    pub trials: usize,
    pub empirical_failure_rate: f64,
    /// `1 − γ`.
    pub theory_rate: f64,
    /// `(1 − γ) − 3·sqrt(γ(1−γ)/trials)`.
    pub threshold: f64,
    /// Fraction of trials whose gradient stream was identically zero.
    pub all_zero_rate: f64,
    /// `(1 − s)^T`.
    pub all_zero_theory: f64,
    pub ok: bool,
}

/// Runs `solver` with its default schedule from `x_1 = 0` for the
/// lower-bound query budget against Bernoulli instances with a uniformly
/// random hidden sign, and counts how often the output misses accuracy
/// `ε` (suboptimality `≥ ε`, up to a `1e-9` relative rounding allowance).
pub fn lower_bound_experiment(
    solver: Target,
    mu: f64,
    q: f64,
    sigma: f64,
    epsilon: f64,
    gamma: f64,
    trials: usize,
    seed: u64,
) -> Result<LowerBoundReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param("gamma", "must lie in (0, 1)"));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    let inst = BernoulliInstance::new(mu, q, sigma, epsilon)?;
    let t_bound = inst.query_bound(gamma);
    let t_used = t_bound.floor() as usize;
    let h = inst.regularizer()?;
    // F is linear: L = 0
    let params = GeometryParams::derive(q, 2.0_f64.min(q), 0.0, h.modulus())?;
    let sched = default_schedule(&params, solver)?;
    let mut failures = 0usize;
    let mut all_zero = 0usize;
    for trial in 0..trials {
        let (oracle, nu) = inst.draw(seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let nu = nu.reveal();
        let mut rng = substream(seed, trial as u64);
        let x_out = if t_used == 0 {
            0.0
        } else {
            let opts = TraceOptions {
                every: 1,
                vectors: true,
                reference: None,
            };
            let out = run(&oracle, &h, &sched, &[0.0], t_used, &opts, &mut rng)?;
            if out
                .trace
                .records
                .iter()
                .all(|r| r.vectors.as_ref().map(|v| v.gradient[0] == 0.0).unwrap_or(false))
            {
                all_zero += 1;
            }
            out.x_ag[0]
        };
        if t_used == 0 {
            all_zero += 1;
        }
        if inst.suboptimality(nu, x_out) >= epsilon * (1.0 - 1e-9) {
            failures += 1;
        }
    }
    let rate = failures as f64 / trials as f64;
    let theory = 1.0 - gamma;
    let threshold = theory - 3.0 * (gamma * (1.0 - gamma) / trials as f64).sqrt();
    Ok(LowerBoundReport {
        t_bound,
        t_used,
        trials,
        empirical_failure_rate: rate,
        theory_rate: theory,
        threshold,
        all_zero_rate: all_zero as f64 / trials as f64,
        all_zero_theory: (1.0 - inst.s).powi(t_used as i32),
        ok: rate >= threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub tau: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Monte Carlo standard error of `empirical`.
    pub std_error: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// mgf level `σ` with `E exp(‖Δ‖_*^p/σ^p) ≤ 2`.
    pub sigma: f64,
    pub radius: f64,
    pub sigma_2: f64,
    pub sigma_q: f64,
    pub rows: Vec<TailRow>,
    /// Empirical `E exp(‖Δ‖_*^p/σ^p)` over every draw.
    pub empirical_mgf: f64,
    pub ok: bool,
}

/// The tail bound for `P(Σ β_t W_t > τ)`, taking the weakest of the
/// regimes that apply at `τ` (in the middle regime the weaker of the two
/// exponent denominators, 4 and `p`).
pub fn martingale_tail_bound(tau: f64, sigma: f64, radius: f64, weights: &[f64], q: f64) -> f64 {
    if tau <= 0.0 {
        return 1.0;
    }
    let p = dual_exponent(q);
    let sr = sigma * radius;
    let s2 = 3.0 * sr * weights.iter().map(|b| b * b).sum::<f64>().sqrt();
    let sq = 3.0 * sr * weights.iter().map(|b| b.abs().powf(q)).sum::<f64>().powf(1.0 / q);
    let mut bound: f64 = 0.0;
    if tau <= s2 * s2 / sr {
        bound = bound.max((-0.25 * (tau / s2).powi(2)).exp());
    } else {
        bound = bound.max((-tau / (4.0 * sr)).exp()).max((-tau / (p * sr)).exp());
    }
    if tau > sq.powf(q) / sr.powf(q - 1.0) {
        bound = bound.max((-(tau / sq).powf(p) / p).exp());
    }
    bound.min(1.0)
}

/// Simulates `Σ β_t ⟨Δ_t, x⋆ − x_t⟩` for a fixed scripted path with
/// `‖x⋆ − x_t‖_q = R`, and compares its upper tail with
/// [`martingale_tail_bound`] on `grid` points of `τ ∈ [0, 3Σ₂]`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_check(
    noise: NoiseKind,
    q: f64,
    dimension: usize,
    sigma: f64,
    weights: &[f64],
    radius: f64,
    trials: usize,
    grid: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if matches!(noise, NoiseKind::HeavyTailPareto { .. }) {
        return Err(Error::param(
            "noise",
            "heavy-tailed noise has no finite exponential moment; concentration does not apply",
        ));
    }
    if weights.is_empty() || trials == 0 || grid < 2 {
        return Err(Error::param("trials", "need weights, trials >= 1 and a grid of >= 2 points"));
    }
    if !(radius > 0.0) {
        return Err(Error::param("R", "must be > 0"));
    }
    let zero = std::sync::Arc::new(move |x: &[f64]| vec![0.0; x.len()]);
    let oracle = AdditiveNoiseOracle::new(dimension, q, zero, noise, sigma)?;
    let level = oracle
        .mgf_level()
        .ok_or_else(|| Error::param("noise", "no exponential moment"))?;
    let p = dual_exponent(q);

    // scripted directions: fixed random unit vectors of ‖·‖_q scaled to R
    let mut path_rng = substream(seed, u64::MAX - 1);
    let path: Vec<Vec<f64>> = weights
        .iter()
        .map(|_| {
            let u: Vec<f64> = (0..dimension).map(|_| path_rng.random_range(-1.0..1.0)).collect();
            let n = lq_norm(&u, q).max(1e-300);
            u.iter().map(|v| radius * v / n).collect()
        })
        .collect();

    let mut sums = Vec::with_capacity(trials);
    let mut mgf_acc = 0.0;
    let mut draws = 0usize;
    let mut rng = substream(seed, 0);
    for _ in 0..trials {
        let mut s = 0.0;
        for (b, dir) in weights.iter().zip(&path) {
            let d = oracle.sample_noise(&mut rng);
            mgf_acc += (dual_norm(&d, q).powf(p) / level.powf(p)).exp();
            draws += 1;
            s += b * dot(&d, dir);
        }
        sums.push(s);
    }
    let sr = level * radius;
    let s2 = 3.0 * sr * weights.iter().map(|b| b * b).sum::<f64>().sqrt();
    let sq = 3.0 * sr * weights.iter().map(|b| b.abs().powf(q)).sum::<f64>().powf(1.0 / q);
    let n = trials as f64;
    let rows: Vec<TailRow> = (0..grid)
        .map(|i| {
            let tau = 3.0 * s2 * i as f64 / (grid - 1) as f64;
            let hits = sums.iter().filter(|&&s| s > tau).count() as f64;
            let emp = hits / n;
            let se = (emp * (1.0 - emp) / n).sqrt().max(1.0 / n);
            let bound = martingale_tail_bound(tau, level, radius, weights, q);
            TailRow {
                tau,
                empirical: emp,
                bound,
                std_error: se,
                ok: emp <= bound + 3.0 * se,
            }
        })
        .collect();
    let empirical_mgf = mgf_acc / draws as f64;
    let ok = rows.iter().all(|r| r.ok) && empirical_mgf <= 2.0;
    Ok(ConcentrationReport {
        sigma: level,
        radius,
        sigma_2: s2,
        sigma_q: sq,
        rows,
        empirical_mgf,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::solvers::{acsmd, nacsmd};
    use approx::assert_relative_eq;

    #[test]
    fn optimum_examples() {
        let free = RidgeInstance::new(vec![1.0, -2.0], 0.1, 0.0, 2.0).unwrap();
        let (x, psi) = exact_optimum(&free);
        assert_eq!(x, free.x_star);
        assert_relative_eq!(psi, 0.01);
        let quad = RidgeInstance::new(vec![1.0, -2.0, 0.4], 0.0, 2.0, 2.0).unwrap();
        let (x, _) = exact_optimum(&quad);
        for (a, b) in x.iter().zip(&quad.x_star) {
            assert_relative_eq!(*a, b / 4.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn optimum_matches_grid_search() {
        let inst = RidgeInstance::new(vec![1.3, -0.7, 2.2], 0.1, 2.0, 4.0).unwrap();
        let (x, _) = exact_optimum(&inst);
        assert!(ridge_optimality_residual(&inst, &x) <= 1e-10);
        for (j, &s) in inst.x_star.iter().enumerate() {
            let f = |v: f64| (v - s).powi(2) / 3.0 + 2.0 / 4.0 * v.powi(4);
            // dense grid then local refinement
            let n = 200_000;
            let (lo, hi) = (-3.0, 3.0);
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..=n {
                let v = lo + (hi - lo) * i as f64 / n as f64;
                if f(v) < best.0 {
                    best = (f(v), v);
                }
            }
            let (mut a, mut b) = (best.1 - 3e-5, best.1 + 3e-5);
            for _ in 0..200 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                if f(m1) < f(m2) {
                    b = m2;
                } else {
                    a = m1;
                }
            }
            assert!((x[j] - 0.5 * (a + b)).abs() < 1e-8);
        }
    }

    fn cert_setup(q: f64, kappa: f64, sigma: f64) -> (AdditiveNoiseOracle, RidgeInstance, Regularizer, GeometryParams) {
        let inst = RidgeInstance::new(vec![0.8, -0.5, 1.2, 0.3], 0.0, 2.0, q).unwrap();
        let oracle = AdditiveNoiseOracle::around_ridge(&inst, NoiseKind::BoundedSphere, sigma).unwrap();
        let h = inst.regularizer().unwrap();
        let params = inst.geometry(kappa).unwrap();
        (oracle, inst, h, params)
    }

    #[test]
    fn certificate_noise_free() {
        let (oracle, inst, h, params) = cert_setup(2.0, 2.0, 0.0);
        let reference = ridge_reference(&inst);
        let s = default_schedule(&params, Target::Nacsmd).unwrap();
        let out = nacsmd(&oracle, &h, &s, &[0.0; 4], 100, &TraceOptions::full(), &mut substream(0, 0)).unwrap();
        let rep = certificate_check(&out.trace, &params, &oracle, &h, &reference).unwrap();
        assert!(rep.ok());
        let last = rep.rows.last().unwrap();
        assert_eq!(last.martingale, 0.0);
        assert_eq!(last.noise_moment, 0.0);
        assert_eq!(last.deterministic, 0.0);
        assert!(rep.max_smoothing_base <= 1.0);
    }

    #[test]
    fn certificate_with_noise_both_solvers() {
        for (q, kappa) in [(4.0, 2.0), (3.0, 1.5)] {
            let (oracle, inst, h, params) = cert_setup(q, kappa, 0.5);
            let reference = ridge_reference(&inst);
            for seed in 0..3 {
                let sn = default_schedule(&params, Target::Nacsmd).unwrap();
                let out = nacsmd(&oracle, &h, &sn, &[0.0; 4], 200, &TraceOptions::full(), &mut substream(seed, 0)).unwrap();
                let rep = certificate_check(&out.trace, &params, &oracle, &h, &reference).unwrap();
                assert!(rep.ok(), "nacsmd q={q}: {}", rep.min_relative_slack);
                let sa = default_schedule(&params, Target::Acsmd).unwrap();
                let out = acsmd(&oracle, &h, &sa, &[0.0; 4], 200, &TraceOptions::full(), &mut substream(seed, 1)).unwrap();
                let rep = certificate_check(&out.trace, &params, &oracle, &h, &reference).unwrap();
                assert!(rep.ok(), "acsmd q={q}: {}", rep.min_relative_slack);
            }
        }
    }

    #[test]
    fn certificate_needs_vectors() {
        let (oracle, inst, h, params) = cert_setup(2.0, 2.0, 0.1);
        let s = default_schedule(&params, Target::Nacsmd).unwrap();
        let opts = TraceOptions {
            every: 1,
            vectors: false,
            reference: None,
        };
        let out = nacsmd(&oracle, &h, &s, &[0.0; 4], 10, &opts, &mut substream(0, 0)).unwrap();
        let err = certificate_check(&out.trace, &params, &oracle, &h, &ridge_reference(&inst)).unwrap_err();
        assert!(matches!(err, Error::DiagnosticUnavailable(_)));
    }

    #[test]
    fn lower_bound_small() {
        let rep = lower_bound_experiment(Target::Acsmd, 1.0, 2.0, 1.0, 0.05, 0.5, 200, 11).unwrap();
        assert_eq!(rep.t_used, 3);
        assert!(rep.ok, "{rep:?}");
    }

    #[test]
    fn tail_bound_edges() {
        assert_eq!(martingale_tail_bound(0.0, 1.0, 1.0, &[1.0; 10], 2.0), 1.0);
        let s2 = 3.0 * 10f64.sqrt();
        assert_relative_eq!(martingale_tail_bound(s2, 1.0, 1.0, &[1.0; 10], 2.0), (-0.25f64).exp());
    }

    #[test]
    fn heavy_tail_rejected() {
        let err = concentration_check(
            NoiseKind::HeavyTailPareto { tail_index: 5.0 },
            2.0,
            3,
            1.0,
            &[1.0; 5],
            1.0,
            10,
            3,
            0,
        );
        assert!(err.is_err());
    }
}

//! Norms, Bregman divergences and the parameter calculus shared by every
//! solver: the exponents `r`, `p` and the constant `M` derived from the
//! smoothness pair `(L, kappa)` and the convexity pair `(mu, q)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sub};
use crate::rng::substream;

/// Problem constants plus the derived quantities `r`, `M`, `p`.
///
/// `mu` is the uniform-convexity modulus of the regularizer with respect to
/// `‖·‖_q`, `l` the weak-smoothness constant of the smooth part with
/// exponent `kappa`, `sigma` the oracle noise level and `radius` a bound on
/// the distance from the optimum used by the concentration estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub q: f64,
    pub kappa: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma: f64,
    pub radius: f64,
    pub r: f64,
    pub m: f64,
    pub p: f64,
}

impl GeometryParams {
    /// Validates the constants and computes `r = (q-κ)/κ`, `M = (r/q)^r L`
    /// and `p = q/(q-1)`, with `0^0 = 1` so that `κ = q` gives `M = L`.
    pub fn derive(q: f64, kappa: f64, l: f64, mu: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 2.0) {
            return Err(Error::param("q", format!("must be a finite real >= 2, got {q}")));
        }
        if !(kappa > 1.0 && kappa <= 2.0) {
            return Err(Error::param("kappa", format!("must lie in (1, 2], got {kappa}")));
        }
        if kappa > q {
            return Err(Error::param("kappa", format!("must not exceed q = {q}, got {kappa}")));
        }
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::param("L", format!("must be finite and >= 0, got {l}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::param("mu", format!("must be finite and > 0, got {mu}")));
        }
        let r = if kappa == q { 0.0 } else { (q - kappa) / kappa };
        // f64::powf already follows 0^0 = 1.
        let m = (r / q).powf(r) * l;
        let p = q / (q - 1.0);
        Ok(Self {
            q,
            kappa,
            l,
            mu,
            sigma: 0.0,
            radius: 1.0,
            r,
            m,
            p,
        })
    }

    pub fn with_noise(mut self, sigma: f64, radius: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::param("sigma", format!("must be finite and >= 0, got {sigma}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::param("R", format!("must be finite and > 0, got {radius}")));
        }
        self.sigma = sigma;
        self.radius = radius;
        Ok(self)
    }

    /// Same geometry with the smoothness constant replaced (used when `L`
    /// is deliberately over-estimated).
    pub fn with_smoothness(self, l: f64) -> Result<Self> {
        let sigma = self.sigma;
        let radius = self.radius;
        Self::derive(self.q, self.kappa, l, self.mu)?.with_noise(sigma, radius)
    }

    /// Effective condition number `L / mu`.
    pub fn condition(&self) -> f64 {
        self.l / self.mu
    }
}

/// `base^(1/r)` with the smooth-case convention: when `r = 0` the power is
/// 0 for `base <= 1` and infinite otherwise.
pub fn inv_r_power(base: f64, r: f64) -> f64 {
    if r == 0.0 {
        if base <= 1.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        base.powf(1.0 / r)
    }
}

/// Hölder conjugate of `q`.
pub fn dual_exponent(q: f64) -> f64 {
    q / (q - 1.0)
}

/// `(Σ |x_j|^q)^{1/q}`.
pub fn lq_norm(x: &[f64], q: f64) -> f64 {
    if q == 2.0 {
        return dot(x, x).sqrt();
    }
    // Scale by the max entry to avoid overflow for large q.
    let peak = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    peak * x.iter().map(|v| (v.abs() / peak).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// `Σ |x_j|^q`, i.e. `‖x‖_q^q` without the root.
pub fn lq_norm_pow(x: &[f64], q: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(q)).sum()
}

/// Norm dual to `‖·‖_q`, the `ℓ_{q/(q-1)}` norm.
pub fn dual_norm(g: &[f64], q: f64) -> f64 {
    lq_norm(g, dual_exponent(q))
}

/// A function with a (sub)gradient oracle.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// `D(x, y) = ω(x) − ω(y) − ⟨∇ω(y), x − y⟩`.
pub fn bregman<F: Differentiable + ?Sized>(omega: &F, x: &[f64], y: &[f64]) -> f64 {
    let g = omega.gradient(y);
    omega.value(x) - omega.value(y) - dot(&g, &sub(x, y))
}

/// Where the empirical checkers draw their pairs: both points uniform in
/// `[-radius, radius]^dimension`.
#[derive(Debug, Clone, Copy)]
pub struct PairSampler {
    pub dimension: usize,
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

/// Pairs closer than this (in the measuring norm) are skipped.
pub const MIN_PAIR_DISTANCE: f64 = 1e-12;

impl PairSampler {
    fn pairs(&self) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> + '_ {
        let mut rng = substream(self.seed, 0);
        let d = self.dimension;
        let rad = self.radius;
        (0..self.samples).map(move |_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-rad..=rad)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-rad..=rad)).collect();
            (x, y)
        })
    }
}

#[derive(Debug, Clone)]
pub struct UniformConvexityReport {
    pub min_ratio: f64,
    pub witness: (Vec<f64>, Vec<f64>),
    pub evaluated: usize,
}

impl UniformConvexityReport {
    pub fn holds(&self, mu: f64, tol: f64) -> bool {
        self.min_ratio >= mu - tol
    }
}

/// Smallest observed value of `[f(x) − f(y) − ⟨∇f(y), x−y⟩] / ((1/q)‖x−y‖_q^q)`.
pub fn check_uniform_convexity<F: Differentiable + ?Sized>(
    f: &F,
    q: f64,
    sampler: &PairSampler,
) -> UniformConvexityReport {
    let mut best = UniformConvexityReport {
        min_ratio: f64::INFINITY,
        witness: (Vec::new(), Vec::new()),
        evaluated: 0,
    };
    for (x, y) in sampler.pairs() {
        let dist = lq_norm(&sub(&x, &y), q);
        if dist < MIN_PAIR_DISTANCE {
            continue;
        }
        best.evaluated += 1;
        let ratio = bregman(f, &x, &y) / (dist.powf(q) / q);
        if ratio < best.min_ratio {
            best.min_ratio = ratio;
            best.witness = (x, y);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct WeakSmoothnessReport {
    pub max_ratio: f64,
    pub witness: (Vec<f64>, Vec<f64>),
    pub evaluated: usize,
}

impl WeakSmoothnessReport {
    pub fn holds(&self, l: f64, tol: f64) -> bool {
        self.max_ratio <= l + tol
    }
}

/// Largest observed value of `[F(x) − F(y) − ⟨∇F(y), x−y⟩] / ((1/κ)‖x−y‖^κ)`
/// with the distance measured in `‖·‖_{norm_q}`.
pub fn check_weak_smoothness<F: Differentiable + ?Sized>(
    f: &F,
    norm_q: f64,
    kappa: f64,
    sampler: &PairSampler,
) -> WeakSmoothnessReport {
    let mut best = WeakSmoothnessReport {
        max_ratio: f64::NEG_INFINITY,
        witness: (Vec::new(), Vec::new()),
        evaluated: 0,
    };
    for (x, y) in sampler.pairs() {
        let dist = lq_norm(&sub(&x, &y), norm_q);
        if dist < MIN_PAIR_DISTANCE {
            continue;
        }
        best.evaluated += 1;
        let ratio = bregman(f, &x, &y) / (dist.powf(kappa) / kappa);
        if ratio > best.max_ratio {
            best.max_ratio = ratio;
            best.witness = (x, y);
        }
    }
    best
}

/// Right-hand side of the inexact-gradient bound
/// `(L/κ)‖x−y‖^κ ≤ (M/(q δ^r))‖x−y‖^q + L δ`.
pub fn young_gap_bound(params: &GeometryParams, x: &[f64], y: &[f64], delta: f64) -> Result<f64> {
    young_gap_bound_at(params, lq_norm(&sub(x, y), params.q), delta)
}

/// [`young_gap_bound`] expressed through the distance `‖x − y‖_q` directly.
pub fn young_gap_bound_at(params: &GeometryParams, dist: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("must be finite and > 0, got {delta}")));
    }
    let scale = if params.r == 0.0 { 1.0 } else { delta.powf(params.r) };
    Ok(params.m / (params.q * scale) * dist.powf(params.q) + params.l * delta)
}

/// Exact uniform-convexity modulus of `(1/q)|·|^q` on the real line, which
/// is also the modulus of `(1/q)‖·‖_q^q` on `ℝ^d` with respect to `‖·‖_q`
/// (the function and the q-th power of the norm are both coordinate sums).
///
/// Equals 1 at `q = 2` and lies strictly between `2^{2-q}` and 1 above it.
/// By homogeneity it is the minimum over `t` of
/// `[1 − |t|^q − q sign(t)|t|^{q−1}(1 − t)] / |1 − t|^q`.
pub fn power_norm_modulus(q: f64) -> f64 {
    if q == 2.0 {
        return 1.0;
    }
    let ratio = |t: f64| {
        let num = 1.0 - t.abs().powf(q) - q * t.signum() * t.abs().powf(q - 1.0) * (1.0 - t);
        num / (1.0 - t).abs().powf(q)
    };
    // The ratio tends to q − 1 (≥ 1) as t → ±∞ and blows up near t = 1, so
    // the minimiser sits in a bounded window left of 1.
    let (lo, hi, n) = (-8.0_f64, 0.99_f64, 20_000usize);
    let step = (hi - lo) / n as f64;
    let mut best_t = lo;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let t = lo + step * i as f64;
        let v = ratio(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    // Golden-section refinement on the bracketing cell.
    let (mut a, mut b) = ((best_t - step).max(lo), (best_t + step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..200 {
        if ratio(c) < ratio(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    best.min(ratio(0.5 * (a + b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct HalfSquare;
    impl Differentiable for HalfSquare {
        fn value(&self, x: &[f64]) -> f64 {
            0.5 * dot(x, x)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }

    struct Linear(Vec<f64>);
    impl Differentiable for Linear {
        fn value(&self, x: &[f64]) -> f64 {
            dot(&self.0, x)
        }
        fn gradient(&self, _x: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    struct ScaledPower {
        mu: f64,
        q: f64,
    }
    impl Differentiable for ScaledPower {
        fn value(&self, x: &[f64]) -> f64 {
            self.mu / self.q * lq_norm_pow(x, self.q)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            x.iter()
                .map(|v| self.mu * crate::linalg::signed_pow(*v, self.q - 1.0))
                .collect()
        }
    }

    /// (1/3)‖x − x⋆‖_2²
    struct RidgeLoss(Vec<f64>);
    impl Differentiable for RidgeLoss {
        fn value(&self, x: &[f64]) -> f64 {
            let e = sub(x, &self.0);
            dot(&e, &e) / 3.0
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            sub(x, &self.0).iter().map(|v| 2.0 * v / 3.0).collect()
        }
    }

    #[test]
    fn derive_params_examples() {
        let g = GeometryParams::derive(2.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!((g.r, g.m, g.p), (0.0, 1.0, 2.0));
        let g = GeometryParams::derive(4.0, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(g.r, 1.0);
        assert_relative_eq!(g.m, 0.25);
        assert_relative_eq!(g.p, 4.0 / 3.0);
        let g = GeometryParams::derive(3.0, 1.5, 2.0, 0.5).unwrap();
        assert_relative_eq!(g.r, 1.0);
        assert_relative_eq!(g.m, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(g.p, 1.5);
    }

    #[test]
    fn derive_params_rejects_bad_domain() {
        let field = |e: Error| match e {
            Error::Parameter { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(field(GeometryParams::derive(1.5, 1.2, 1.0, 1.0).unwrap_err()), "q");
        assert_eq!(field(GeometryParams::derive(2.0, 1.0, 1.0, 1.0).unwrap_err()), "kappa");
        assert_eq!(field(GeometryParams::derive(2.0, 2.5, 1.0, 1.0).unwrap_err()), "kappa");
        assert_eq!(field(GeometryParams::derive(2.0, 2.0, -1.0, 1.0).unwrap_err()), "L");
        assert_eq!(field(GeometryParams::derive(2.0, 2.0, 1.0, 0.0).unwrap_err()), "mu");
        assert_eq!(
            field(GeometryParams::derive(2.0, 2.0, 1.0, 1.0).unwrap().with_noise(-1.0, 1.0).unwrap_err()),
            "sigma"
        );
    }

    #[test]
    fn norms() {
        assert_relative_eq!(lq_norm(&[3.0, 4.0], 2.0), 5.0);
        assert_relative_eq!(lq_norm(&[1.0, 1.0, 1.0, 1.0], 4.0), 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(dual_exponent(4.0), 4.0 / 3.0);
        assert_relative_eq!(dual_norm(&[1.0, 0.0], 4.0), 1.0);
        assert_eq!(lq_norm(&[0.0, 0.0], 3.0), 0.0);
        // no overflow for large entries
        assert_relative_eq!(lq_norm(&[1e200, 0.0], 4.0), 1e200, max_relative = 1e-12);
    }

    #[test]
    fn bregman_examples() {
        assert_relative_eq!(bregman(&HalfSquare, &[1.0, 0.0], &[0.0, 0.0]), 0.5);
        let w = ScaledPower { mu: 2.0, q: 4.0 };
        assert_eq!(bregman(&w, &[0.3, -1.2], &[0.3, -1.2]), 0.0);
        assert_relative_eq!(bregman(&w, &[1.0], &[-1.0]), 4.0, epsilon = 1e-12);
        // finite-difference cross-check of the gradient used above
        let h = 1e-6;
        let fd = (w.value(&[-1.0 + h]) - w.value(&[-1.0 - h])) / (2.0 * h);
        assert_relative_eq!(fd, w.gradient(&[-1.0])[0], max_relative = 1e-8);
    }

    #[test]
    fn uniform_convexity_checker() {
        let s = PairSampler { dimension: 3, samples: 2000, radius: 2.0, seed: 1 };
        let rep = check_uniform_convexity(&HalfSquare, 2.0, &s);
        assert_relative_eq!(rep.min_ratio, 1.0, epsilon = 1e-9);
        assert!(rep.holds(1.0, 1e-9));

        let s1 = PairSampler { dimension: 1, samples: 20_000, radius: 2.0, seed: 2 };
        let rep = check_uniform_convexity(&ScaledPower { mu: 1.0, q: 4.0 }, 4.0, &s1);
        let c4 = power_norm_modulus(4.0);
        assert!(rep.min_ratio > 0.0);
        assert!(rep.min_ratio >= c4 - 1e-9);
        assert!(rep.min_ratio < c4 + 0.02, "{} vs {c4}", rep.min_ratio);
        // the unit constant is not attained
        assert!(!rep.holds(1.0, 1e-9));

        let rep = check_uniform_convexity(&Linear(vec![1.0, -2.0, 0.5]), 3.0, &s);
        assert!(rep.min_ratio.abs() < 1e-9);
    }

    #[test]
    fn power_norm_modulus_values() {
        assert_eq!(power_norm_modulus(2.0), 1.0);
        assert_relative_eq!(power_norm_modulus(4.0), 1.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(power_norm_modulus(3.0), 2.0 - 2f64.sqrt(), epsilon = 1e-10);
        for q in [2.5, 3.0, 4.0, 6.0, 10.0] {
            let c = power_norm_modulus(q);
            assert!(c < 1.0 && c > 2f64.powf(2.0 - q), "q={q} c={c}");
        }
    }

    #[test]
    fn weak_smoothness_checker() {
        let star = vec![0.5, -0.25, 1.0, 0.0];
        let s = PairSampler { dimension: 4, samples: 2000, radius: 3.0, seed: 3 };
        let rep = check_weak_smoothness(&RidgeLoss(star.clone()), 2.0, 2.0, &s);
        assert_relative_eq!(rep.max_ratio, 2.0 / 3.0, epsilon = 1e-9);

        let rep = check_weak_smoothness(&Linear(vec![1.0; 4]), 2.0, 1.5, &s);
        assert!(rep.max_ratio.abs() < 1e-9);

        let d = 16;
        let s16 = PairSampler { dimension: d, samples: 5000, radius: 1.0, seed: 4 };
        let rep = check_weak_smoothness(&RidgeLoss(vec![0.1; d]), 4.0, 2.0, &s16);
        let bound = 2.0 / 3.0 * (d as f64).powf(0.5);
        assert!(rep.max_ratio <= bound + 1e-9);
        assert!(rep.max_ratio > 2.0 / 3.0);
        // an aligned pair attains the dimension-dependent constant
        let x = vec![1.0; d];
        let y = vec![0.0; d];
        let ratio = bregman(&RidgeLoss(vec![0.0; d]), &x, &y) / (lq_norm(&x, 4.0).powi(2) / 2.0);
        assert_relative_eq!(ratio, bound, epsilon = 1e-12);
    }

    #[test]
    fn young_gap_examples() {
        let g = GeometryParams::derive(4.0, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(young_gap_bound(&g, &[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 0.3);
        let v = young_gap_bound(&g, &[1.0], &[0.0], 1.0).unwrap();
        assert_relative_eq!(v, 1.0625);
        assert!(0.5 <= v);
        assert!(young_gap_bound(&g, &[1.0], &[0.0], 0.0).is_err());
        let smooth = GeometryParams::derive(2.0, 2.0, 3.0, 1.0).unwrap();
        // r = 0: (M/q)‖x−y‖^q + Lδ with M = L
        assert_relative_eq!(young_gap_bound_at(&smooth, 2.0, 0.5).unwrap(), 1.5 * 4.0 + 1.5);
    }

    #[test]
    fn young_gap_dominance_sweep() {
        let g = GeometryParams::derive(3.0, 1.5, 1.7, 1.0).unwrap();
        let mut rng = substream(11, 0);
        let mut violations = 0;
        for _ in 0..10_000 {
            let dist: f64 = 10f64.powf(rng.random_range(-4.0..3.0));
            let delta: f64 = 10f64.powf(rng.random_range(-6.0..4.0));
            let lhs = g.l / g.kappa * dist.powf(g.kappa);
            let rhs = young_gap_bound_at(&g, dist, delta).unwrap();
            if lhs > rhs * (1.0 + 1e-12) {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn inv_r_power_convention() {
        assert_eq!(inv_r_power(0.7, 0.0), 0.0);
        assert_eq!(inv_r_power(1.0, 0.0), 0.0);
        assert!(inv_r_power(1.1, 0.0).is_infinite());
        assert_relative_eq!(inv_r_power(0.25, 0.5), 0.0625);
    }
}

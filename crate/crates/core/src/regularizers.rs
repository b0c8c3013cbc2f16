//! The uniformly convex regularizer `H(x) = (μ/q)‖x‖_q^q` and its exact
//! composite proximal step. `H` also serves as the distance-generating
//! function of the Bregman terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{power_norm_modulus, Differentiable};
use crate::linalg::signed_pow;

/// Below this magnitude `|v|^{1/(q-1)}` is flushed to zero.
const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    PowerNormQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub kind: RegularizerKind,
    pub mu: f64,
    pub q: f64,
    pub dimension: usize,
    /// Optional per-coordinate box `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Regularizer {
    pub fn power_norm(mu: f64, q: f64, dimension: usize) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::param("mu", format!("must be finite and > 0, got {mu}")));
        }
        if !(q.is_finite() && q >= 2.0) {
            return Err(Error::param("q", format!("must be finite and >= 2, got {q}")));
        }
        if dimension == 0 {
            return Err(Error::param("dimension", "must be positive"));
        }
        Ok(Self {
            kind: RegularizerKind::PowerNormQ,
            mu,
            q,
            dimension,
            bounds: None,
        })
    }

    pub fn with_box(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.dimension {
            return Err(Error::param("bounds", "one interval per coordinate required"));
        }
        if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::param("bounds", "every interval needs lo <= hi"));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    /// Uniform-convexity modulus of `H` with respect to `‖·‖_q`.
    pub fn modulus(&self) -> f64 {
        self.mu * power_norm_modulus(self.q)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.mu / self.q * x.iter().map(|v| v.abs().powf(self.q)).sum::<f64>()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.grad_scalar(*v)).collect()
    }

    #[inline]
    fn grad_scalar(&self, v: f64) -> f64 {
        self.mu * signed_pow(v, self.q - 1.0)
    }

    #[inline]
    fn inverse_grad_scalar(&self, v: f64, weight: f64) -> f64 {
        // solves weight * μ |x|^{q-1} sign(x) = v
        let mag = v.abs() / (weight * self.mu);
        if mag < UNDERFLOW_FLOOR {
            0.0
        } else {
            v.signum() * mag.powf(1.0 / (self.q - 1.0))
        }
    }

    fn clamp(&self, j: usize, v: f64) -> f64 {
        match &self.bounds {
            Some(b) => v.clamp(b[j].0, b[j].1),
            None => v,
        }
    }

    /// `argmin_x α[⟨g, x⟩ + H(x)] + γ D_H(x, y)`, solved in closed form per
    /// coordinate:
    /// `v = γ∇H(y) − αg`, `x = sign(v)(|v|/((α+γ)μ))^{1/(q−1)}`.
    pub fn composite_prox(&self, g: &[f64], y: &[f64], alpha: f64, gamma: f64) -> Result<Vec<f64>> {
        check_weights(alpha, gamma, false)?;
        Ok(g
            .iter()
            .zip(y)
            .enumerate()
            .map(|(j, (gj, yj))| {
                let v = gamma * self.grad_scalar(*yj) - alpha * gj;
                self.clamp(j, self.inverse_grad_scalar(v, alpha + gamma))
            })
            .collect())
    }

    /// Independent reference for [`Self::composite_prox`]: bisection on the
    /// monotone scalar optimality condition of each coordinate. `alpha = 0`
    /// is allowed here.
    pub fn prox_bisection_oracle(
        &self,
        g: &[f64],
        y: &[f64],
        alpha: f64,
        gamma: f64,
        tol: f64,
    ) -> Result<Vec<f64>> {
        check_weights(alpha, gamma, true)?;
        if !(tol > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        let mut out = Vec::with_capacity(g.len());
        for (j, (gj, yj)) in g.iter().zip(y).enumerate() {
            let target = gamma * self.grad_scalar(*yj) - alpha * gj;
            let phi = |x: f64| (alpha + gamma) * self.grad_scalar(x) - target;
            let x = bisect_increasing(phi, tol).ok_or_else(|| {
                Error::numerical(0, format!("prox bracket expansion failed on coordinate {j}"))
            })?;
            out.push(self.clamp(j, x));
        }
        Ok(out)
    }

    /// Euclidean proximal step
    /// `argmin_x ⟨g, x⟩ + H(x) + (β/2)‖x − c‖_2²`, by per-coordinate
    /// bisection. Used by the Euclidean baseline.
    pub fn euclidean_prox(&self, g: &[f64], center: &[f64], beta: f64) -> Result<Vec<f64>> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param("beta", format!("must be finite and > 0, got {beta}")));
        }
        let mut out = Vec::with_capacity(g.len());
        for (j, (gj, cj)) in g.iter().zip(center).enumerate() {
            let phi = |x: f64| gj + self.grad_scalar(x) + beta * (x - cj);
            let x = bisect_increasing(phi, 1e-14).ok_or_else(|| {
                Error::numerical(0, format!("euclidean prox bracket failed on coordinate {j}"))
            })?;
            out.push(self.clamp(j, x));
        }
        Ok(out)
    }

    /// First-order residual `‖αg + (α+γ)∇H(x⁺) − γ∇H(y)‖_∞` of a prox point.
    pub fn prox_residual(&self, g: &[f64], y: &[f64], alpha: f64, gamma: f64, x: &[f64]) -> f64 {
        g.iter()
            .zip(y)
            .zip(x)
            .map(|((gj, yj), xj)| {
                (alpha * gj + (alpha + gamma) * self.grad_scalar(*xj) - gamma * self.grad_scalar(*yj)).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl Differentiable for Regularizer {
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grad(x)
    }
}

fn check_weights(alpha: f64, gamma: f64, allow_zero_alpha: bool) -> Result<()> {
    let alpha_ok = if allow_zero_alpha { alpha >= 0.0 } else { alpha > 0.0 };
    if !(alpha_ok && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be finite and > 0, got {alpha}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be finite and > 0, got {gamma}")));
    }
    Ok(())
}

/// Root of a nondecreasing scalar function. The bracket `[-w, w]` starts at
/// `w = 1` and doubles up to 200 times.
pub(crate) fn bisect_increasing(phi: impl Fn(f64) -> f64, tol: f64) -> Option<f64> {
    let mut w = 1.0_f64;
    let mut doublings = 0;
    while !(phi(-w) <= 0.0 && phi(w) >= 0.0) {
        w *= 2.0;
        doublings += 1;
        if doublings > 200 || !w.is_finite() {
            return None;
        }
    }
    let (mut lo, mut hi) = (-w, w);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..300 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    /// Scalar prox objective α[g x + H(x)] + γ D_H(x, y) for a 1-D regularizer.
    fn scalar_objective(h: &Regularizer, g: f64, y: f64, alpha: f64, gamma: f64) -> impl Fn(f64) -> f64 + '_ {
        move |x| {
            let hx = h.evaluate(&[x]);
            let hy = h.evaluate(&[y]);
            alpha * (g * x + hx) + gamma * (hx - hy - h.grad(&[y])[0] * (x - y))
        }
    }

    #[test]
    fn evaluate_and_grad() {
        let h = Regularizer::power_norm(2.0, 4.0, 2).unwrap();
        assert_relative_eq!(h.evaluate(&[1.0, 1.0]), 1.0);
        assert_eq!(h.grad(&[1.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(h.evaluate(&[0.0, 0.0]), 0.0);
        assert_eq!(h.grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        let h2 = Regularizer::power_norm(1.0, 2.0, 2).unwrap();
        assert_relative_eq!(h2.evaluate(&[3.0, -4.0]), 12.5);
        assert_eq!(h2.grad(&[3.0, -4.0]), vec![3.0, -4.0]);
    }

    #[test]
    fn prox_examples_against_scalar_minimisation() {
        let h = Regularizer::power_norm(1.0, 2.0, 1).unwrap();
        let x = h.composite_prox(&[-1.0], &[0.0], 1.0, 1.0).unwrap()[0];
        let oracle = golden_min(scalar_objective(&h, -1.0, 0.0, 1.0, 1.0), -10.0, 10.0);
        assert_relative_eq!(oracle, 0.5, epsilon = 1e-7);
        assert_relative_eq!(x, 0.5, epsilon = 1e-14);

        let h4 = Regularizer::power_norm(2.0, 4.0, 1).unwrap();
        let x = h4.composite_prox(&[0.0], &[1.0], 1.0, 1.0).unwrap()[0];
        let oracle = h4.prox_bisection_oracle(&[0.0], &[1.0], 1.0, 1.0, 1e-14).unwrap()[0];
        assert_relative_eq!(x, 0.5f64.powf(1.0 / 3.0), epsilon = 1e-14);
        assert_relative_eq!(oracle, 0.793700525984, epsilon = 1e-11);

        // g = 0: x = (γ/(α+γ))^{1/(q-1)} y, tending to y as α → 0
        let y = 1.7;
        for alpha in [1.0, 1e-3, 1e-9] {
            let x = h4.composite_prox(&[0.0], &[y], alpha, 1.0).unwrap()[0];
            let expected = (1.0 / (1.0 + alpha)).powf(1.0 / 3.0) * y;
            assert_relative_eq!(x, expected, epsilon = 1e-13);
            let m = golden_min(scalar_objective(&h4, 0.0, y, alpha, 1.0), -5.0, 5.0);
            assert_relative_eq!(m, expected, epsilon = 1e-6);
        }
        assert_relative_eq!(
            h4.composite_prox(&[0.0], &[y], 1e-12, 1.0).unwrap()[0],
            y,
            epsilon = 1e-11
        );
    }

    #[test]
    fn prox_rejects_bad_weights() {
        let h = Regularizer::power_norm(1.0, 3.0, 1).unwrap();
        assert!(matches!(
            h.composite_prox(&[0.0], &[0.0], 0.0, 1.0),
            Err(Error::Parameter { field: "alpha", .. })
        ));
        assert!(matches!(
            h.composite_prox(&[0.0], &[0.0], 1.0, -1.0),
            Err(Error::Parameter { field: "gamma", .. })
        ));
    }

    #[test]
    fn bisection_oracle_edge_cases() {
        let h = Regularizer::power_norm(1.5, 3.0, 2).unwrap();
        let y = [0.4, -2.0];
        let x = h.prox_bisection_oracle(&[0.0, 0.0], &y, 0.0, 2.0, 1e-13).unwrap();
        assert_relative_eq!(x[0], y[0], epsilon = 1e-12);
        assert_relative_eq!(x[1], y[1], epsilon = 1e-12);
        let h1 = Regularizer::power_norm(1.0, 2.0, 1).unwrap();
        let tol = 1e-9;
        let x = h1.prox_bisection_oracle(&[-1.0], &[0.0], 1.0, 1.0, tol).unwrap()[0];
        assert!((x - 0.5).abs() <= tol);
        // bracket cannot contain a non-finite root
        assert!(h1.prox_bisection_oracle(&[f64::MAX], &[0.0], 1e10, 1.0, tol).is_err());
    }

    #[test]
    fn tiny_values_do_not_produce_nan() {
        let h = Regularizer::power_norm(1.0, 4.0, 2).unwrap();
        let x = h.composite_prox(&[1e-320, 0.0], &[0.0, 1e-310], 1.0, 1.0).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn box_constraint_clamps() {
        let h = Regularizer::power_norm(1.0, 2.0, 2)
            .unwrap()
            .with_box(vec![(0.0, 0.25), (-1.0, 1.0)])
            .unwrap();
        let x = h.composite_prox(&[-1.0, -1.0], &[0.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(x, vec![0.25, 0.5]);
        // the clamped point minimises the scalar objective over the interval
        let f = |x: f64| (-1.0) * x + 0.5 * x * x + 0.5 * x * x;
        let grid_best = (0..=1000)
            .map(|i| 0.25 * i as f64 / 1000.0)
            .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        assert_relative_eq!(grid_best, 0.25);
        assert!(Regularizer::power_norm(1.0, 2.0, 2).unwrap().with_box(vec![(1.0, 0.0)]).is_err());
    }

    #[test]
    fn euclidean_prox_optimality() {
        let h = Regularizer::power_norm(2.0, 4.0, 3).unwrap();
        let g = [0.3, -1.0, 2.0];
        let c = [1.0, 0.0, -0.5];
        let x = h.euclidean_prox(&g, &c, 1.7).unwrap();
        for j in 0..3 {
            let res = g[j] + h.grad(&x)[j] + 1.7 * (x[j] - c[j]);
            assert!(res.abs() < 1e-10);
        }
    }
}

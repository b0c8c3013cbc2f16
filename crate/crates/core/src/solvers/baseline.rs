//! Euclidean multi-stage accelerated stochastic approximation (AC-SA),
//! the reference method of the benchmarks.
//!
//! Each stage runs AC-SA with `α_t = 2/(t+1)`, `γ_t = 4υ_k/(t(t+1))` from
//! the previous stage's averaged point; stage lengths grow so the
//! optimality gap bound halves per stage.

use serde::{Deserialize, Serialize};

use super::{composite_value, IterRecord, IterVectors, RunTrace, TraceOptions};
use crate::error::{Error, Result};
use crate::geometry::bregman;
use crate::linalg::{all_finite, combine, sub};
use crate::oracles::GradientOracle;
use crate::regularizers::Regularizer;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsaConfig {
    /// Euclidean strong-convexity modulus exploited by the method.
    pub mu: f64,
    /// Euclidean smoothness constant.
    pub l: f64,
    /// Noise level `σ` with `E‖G − ∇F‖_2² ≤ σ²`.
    pub sigma: f64,
    /// Bound on `Ψ(x_1) − Ψ*`.
    pub v0: f64,
    /// Total iteration budget across stages.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcsaOutput {
    pub x_ag: Vec<f64>,
    /// `(N_k, υ_k)` of every stage started.
    pub stages: Vec<(usize, f64)>,
    pub trace: RunTrace,
}

impl AcsaConfig {
    /// `N_k = ⌈max{4√(2L/μ), 128σ²/(3μV₀2^{−(k+1)})}⌉`.
    pub fn stage_length(&self, k: usize) -> usize {
        let a = 4.0 * (2.0 * self.l / self.mu).sqrt();
        let b = 128.0 * self.sigma * self.sigma / (3.0 * self.mu * self.v0 * 2f64.powi(-(k as i32 + 1)));
        let n = a.max(b).ceil();
        if n >= usize::MAX as f64 {
            usize::MAX
        } else {
            (n as usize).max(1)
        }
    }

    /// `υ_k = max{2L, [μσ²N(N+1)(N+2)/(3V₀2^{−(k−1)})]^{1/2}}`.
    pub fn stage_upsilon(&self, k: usize, n: usize) -> f64 {
        let nf = n as f64;
        let v = self.mu * self.sigma * self.sigma * nf * (nf + 1.0) * (nf + 2.0)
            / (3.0 * self.v0 * 2f64.powi(-(k as i32 - 1)));
        (2.0 * self.l).max(v.sqrt())
    }
}

/// Multi-stage AC-SA on `F + H` with Euclidean prox terms. Runs stages
/// until `cfg.iterations` oracle calls have been made (the last stage may
/// be cut short) and returns the current averaged point.
pub fn acsa_baseline<O: GradientOracle + ?Sized>(
    oracle: &O,
    h: &Regularizer,
    cfg: &AcsaConfig,
    x1: &[f64],
    opts: &TraceOptions,
    rng: &mut SimRng,
) -> Result<AcsaOutput> {
    if !(cfg.mu > 0.0 && cfg.mu.is_finite()) {
        return Err(Error::param("mu", "baseline needs a positive strong-convexity modulus"));
    }
    if !(cfg.l > 0.0 && cfg.l.is_finite()) {
        return Err(Error::param("L", "must be > 0"));
    }
    if !(cfg.v0 > 0.0 && cfg.v0.is_finite()) {
        return Err(Error::param("V0", "must be > 0"));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::param("sigma", "must be >= 0"));
    }
    if x1.len() != oracle.dimension() {
        return Err(Error::param("x1", "dimension mismatch"));
    }
    let mu = cfg.mu;
    let mut trace = RunTrace {
        algorithm: "acsa".into(),
        every: opts.every,
        records: Vec::new(),
    };
    let mut stages = Vec::new();
    let mut p = x1.to_vec();
    let mut done = 0usize;
    let mut k = 1usize;
    while done < cfg.iterations {
        let n_k = cfg.stage_length(k);
        let ups = cfg.stage_upsilon(k, n_k);
        stages.push((n_k, ups));
        let mut x = p.clone();
        let mut x_ag = p.clone();
        let steps = n_k.min(cfg.iterations - done);
        for t in 1..=steps {
            let tf = t as f64;
            let a = 2.0 / (tf + 1.0);
            let g_t = 4.0 * ups / (tf * (tf + 1.0));
            let den = g_t + (1.0 - a * a) * mu;
            let x_md = combine(
                (1.0 - a) * (mu + g_t) / den,
                &x_ag,
                a * ((1.0 - a) * mu + g_t) / den,
                &x,
            );
            let g = oracle.sample_gradient(&x_md, rng);
            let beta = mu + g_t;
            let center = combine(a * mu / beta, &x_md, ((1.0 - a) * mu + g_t) / beta, &x);
            let x_next = h
                .euclidean_prox(&g, &center, beta / a)
                .map_err(|e| relabel(e, done + t))?;
            if !all_finite(&x_next) {
                return Err(Error::numerical(done + t, "non-finite iterate"));
            }
            x_ag = combine(a, &x_next, 1.0 - a, &x_ag);
            let global = done + t;
            if opts.every > 0 && (global % opts.every == 0 || global == 1) {
                let (psi_gap, bregman_to_opt) = match &opts.reference {
                    Some(r) => (
                        composite_value(oracle, h, &x_ag).map(|v| v - r.psi_star),
                        Some(bregman(h, &r.x_opt, &x_next)),
                    ),
                    None => (None, None),
                };
                trace.records.push(IterRecord {
                    t: global,
                    alpha: a,
                    gamma: g_t,
                    cum_alpha: f64::NAN,
                    psi_gap,
                    bregman_to_opt,
                    vectors: opts.vectors.then(|| IterVectors {
                        noise: oracle.mean_gradient(&x_md).map(|m| sub(&g, &m)),
                        x: x.clone(),
                        x_next: x_next.clone(),
                        x_ag: x_ag.clone(),
                        x_md: Some(x_md.clone()),
                        gradient: g.clone(),
                    }),
                });
            }
            x = x_next;
        }
        done += steps;
        p = x_ag;
        k += 1;
    }
    Ok(AcsaOutput { x_ag: p, stages, trace })
}

fn relabel(e: Error, t: usize) -> Error {
    match e {
        Error::Numerical { reason, .. } => Error::Numerical { iteration: t, reason },
        other => other,
    }
}

//! Three operations for the browser page: a convergence race between the
//! two solvers, the scalar proximal map, and the Bernoulli lower-bound
//! experiment. Everything crosses the boundary as numbers, float arrays or
//! JSON strings, so the same functions run natively in tests.

use compsmd::diagnostics::{lower_bound_experiment, ridge_reference};
use compsmd::oracles::{GradientOracle, RidgeInstance, RidgeResponseOracle};
use compsmd::regularizers::Regularizer;
use compsmd::rng::substream;
use compsmd::solvers::{default_schedule, polynomial_schedule, run, StepSchedule, Target, TraceOptions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub label: String,
    /// `log10((Ψ(x^ag_{t+1}) − Ψ*) / (Ψ(x_1) − Ψ*))` for `t = 1..=t_max`.
    pub log_rel_gap: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Race {
    pub dimension: usize,
    pub smoothness: f64,
    pub curves: Vec<Curve>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// NACSMD (constant α) against ACSMD with its default schedule on a
/// noisy ridge instance with `x⋆ = (1, …, 1)/√d`, started at 0. `noise`
/// scales the response noise.
pub fn race(d: usize, q: f64, l_multiplier: f64, noise: f64, t_max: usize, seed: u64) -> Result<Race, String> {
    if d == 0 || t_max == 0 || t_max > 100_000 {
        return Err("need d >= 1 and 1 <= t_max <= 100000".into());
    }
    if !(l_multiplier >= 1.0) {
        return Err("L multiplier must be >= 1".into());
    }
    let x_star = vec![1.0 / (d as f64).sqrt(); d];
    let inst = RidgeInstance::new(x_star, noise, 2.0, q).map_err(err)?;
    let oracle = RidgeResponseOracle(inst.clone());
    let h = inst.regularizer().map_err(err)?;
    let base = inst.geometry(2.0).map_err(err)?;
    let params = base
        .with_smoothness(base.l * l_multiplier)
        .and_then(|p| p.with_noise(oracle.noise_level(), base.radius))
        .map_err(err)?;
    let reference = ridge_reference(&inst);
    let x1 = vec![0.0; d];
    let v0 = inst.loss(&x1) + h.evaluate(&x1) - reference.psi_star;
    let runs: Vec<(&str, StepSchedule)> = vec![
        ("NACSMD", polynomial_schedule(&params, Target::Nacsmd, 0.0, 1.0).map_err(err)?),
        ("ACSMD", default_schedule(&params, Target::Acsmd).map_err(err)?),
    ];
    let mut curves = Vec::new();
    for (i, (label, sched)) in runs.into_iter().enumerate() {
        let opts = TraceOptions::gaps(reference.clone());
        let out = run(&oracle, &h, &sched, &x1, t_max, &opts, &mut substream(seed, i as u64)).map_err(err)?;
        let log_rel_gap = out
            .trace
            .records
            .iter()
            .map(|r| (r.psi_gap.unwrap_or(f64::NAN).max(1e-300) / v0).log10())
            .collect();
        curves.push(Curve {
            label: label.into(),
            log_rel_gap,
        });
    }
    Ok(Race {
        dimension: d,
        smoothness: params.l,
        curves,
    })
}

/// `x ↦ prox(g)` for one coordinate over a grid of gradients in
/// `[-g_max, g_max]`, with prox centre `y`.
pub fn prox_curve(q: f64, mu: f64, alpha: f64, gamma: f64, y: f64, g_max: f64, n: usize) -> Result<Vec<f64>, String> {
    if n < 2 || n > 10_000 {
        return Err("need 2 <= n <= 10000 grid points".into());
    }
    let h = Regularizer::power_norm(mu, q, 1).map_err(err)?;
    (0..n)
        .map(|i| {
            let g = -g_max + 2.0 * g_max * i as f64 / (n - 1) as f64;
            h.composite_prox(&[g], &[y], alpha, gamma).map(|x| x[0]).map_err(err)
        })
        .collect()
}

/// Lower-bound experiment as a JSON report.
pub fn lower_bound(accelerated: bool, mu: f64, q: f64, sigma: f64, epsilon: f64, trials: usize, seed: u64) -> Result<String, String> {
    let target = if accelerated { Target::Acsmd } else { Target::Nacsmd };
    let rep = lower_bound_experiment(target, mu, q, sigma, epsilon, 0.5, trials, seed).map_err(err)?;
    serde_json::to_string(&rep).map_err(err)
}

#[wasm_bindgen(js_name = race)]
pub fn race_js(d: usize, q: f64, l_multiplier: f64, noise: f64, t_max: usize, seed: u32) -> Result<String, JsError> {
    let r = race(d, q, l_multiplier, noise, t_max, seed as u64).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&r).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = proxCurve)]
pub fn prox_curve_js(q: f64, mu: f64, alpha: f64, gamma: f64, y: f64, g_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    prox_curve(q, mu, alpha, gamma, y, g_max, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = lowerBound)]
pub fn lower_bound_js(accelerated: bool, mu: f64, q: f64, sigma: f64, epsilon: f64, trials: usize, seed: u32) -> Result<String, JsError> {
    lower_bound(accelerated, mu, q, sigma, epsilon, trials, seed as u64).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_curve_is_monotone_decreasing_in_g() {
        let c = prox_curve(4.0, 1.0, 0.5, 2.0, 0.3, 3.0, 101).unwrap();
        assert!(c.windows(2).all(|w| w[1] <= w[0]));
        // g = 0 keeps a fixed point at y only when α = 0; here it shrinks
        assert!(c[50].abs() < 0.3 && c[50] > 0.0);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(race(0, 4.0, 1.0, 0.1, 10, 0).is_err());
        assert!(race(5, 1.5, 1.0, 0.1, 10, 0).is_err());
        assert!(prox_curve(4.0, 1.0, 0.5, 2.0, 0.0, 1.0, 1).is_err());
        assert!(lower_bound(true, 1.0, 2.0, 1.0, 0.05, 0, 1).is_err());
    }
}

//! Per-iteration metrics and the analysis checks built on them.

use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, HyperParams, OptimizerState, Simulation};
use crate::calibration::PrivacyAccountant;
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::scalar::Scalar;
use crate::vector::pairwise_sum_scalar;

/// Metrics of the state after step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: u64,
    /// `||grad f(x^t)||^2`, always from exact gradients.
    pub grad_norm_sq: f64,
    pub f_value: f64,
    /// `f(x^t) - f*`, when the optimum is known.
    pub f_gap: Option<f64>,
    pub lyapunov: Option<f64>,
    /// Workers whose clipping input exceeded `tau` in this step.
    pub clip_active: usize,
    pub eps_spent: Option<f64>,
    pub delta_spent: Option<f64>,
    pub wall_ns: u64,
}

/// What [`record`] computes beyond the always-present metrics.
#[derive(Clone, Debug)]
pub struct DiagnosticsConfig<T> {
    /// `eta` for the Lyapunov function; `None` skips it.
    pub lyapunov_eta: Option<T>,
    /// Reference value standing in for `f*` in the Lyapunov function when the
    /// problem does not know it. Differences of the Lyapunov function do not
    /// depend on it. `f_gap` stays empty regardless.
    pub f_reference: Option<T>,
    pub privacy: Option<PrivacyAccountant>,
}

impl<T> Default for DiagnosticsConfig<T> {
    fn default() -> Self {
        Self {
            lyapunov_eta: None,
            f_reference: None,
            privacy: None,
        }
    }
}

impl<T: Scalar> DiagnosticsConfig<T> {
    fn reference(&self, problem: &dyn Problem<T>) -> Option<T> {
        problem.f_star().or(self.f_reference)
    }
}

pub(crate) fn record<T: Scalar>(sim: &Simulation<'_, T>, config: &DiagnosticsConfig<T>, wall_ns: u64) -> RunRecord {
    let problem = sim.problem();
    let state = sim.state();
    let hp = sim.hyper_params();
    let f_value = problem.value(&state.x);
    let reference = config.reference(problem);
    let lyapunov = match (config.lyapunov_eta, reference, sim.algorithm()) {
        (Some(eta), Some(f_ref), Algorithm::Clip21Sgd2m) => Some(lyapunov_with_reference(state, problem, hp, eta, f_ref)),
        _ => None,
    };
    let spend = config.privacy.and_then(|acc| acc.spend_after(state.t).ok());
    RunRecord {
        t: state.t,
        grad_norm_sq: problem.grad(&state.x).norm_sq().to_f64_lossy(),
        f_value: f_value.to_f64_lossy(),
        f_gap: problem.f_star().map(|r| (f_value - r).to_f64_lossy()),
        lyapunov: lyapunov.map(|v| v.to_f64_lossy()),
        clip_active: if sim.algorithm().uses_tau() {
            state.clip_active(hp.tau)
        } else {
            0
        },
        eps_spent: spend.map(|s| s.epsilon),
        delta_spent: spend.map(|s| s.delta),
        wall_ns,
    }
}

/// The potential of the double-momentum analysis,
///
/// ```text
/// Phi = f(x) - f* + 2 gamma / (beta_hat eta) mean ||g_i - v_i||^2
///     + 8 gamma beta / (beta_hat^2 eta^2) mean ||v_i - grad f_i(x)||^2
///     + 2 gamma / beta ||v - grad f(x)||^2
/// ```
///
/// where `v` is the mean momentum. Needs a known `f*`.
pub fn lyapunov<T: Scalar>(
    state: &OptimizerState<T>,
    problem: &dyn Problem<T>,
    hp: &HyperParams<T>,
    eta: T,
) -> Result<T> {
    let f_star = problem
        .f_star()
        .ok_or_else(|| Error::DiagnosticUnavailable(format!("{} has no known optimal value", problem.name())))?;
    Ok(lyapunov_with_reference(state, problem, hp, eta, f_star))
}

/// [`lyapunov`] with `f*` replaced by `f_ref`.
pub fn lyapunov_with_reference<T: Scalar>(
    state: &OptimizerState<T>,
    problem: &dyn Problem<T>,
    hp: &HyperParams<T>,
    eta: T,
    f_ref: T,
) -> T {
    let x = &state.x;
    let n = T::from_usize_lossy(state.n_workers());
    let grads = problem.local_grads(x);
    let shift_terms: Vec<T> = state
        .workers
        .iter()
        .map(|w| w.shift.sub(&w.momentum).norm_sq())
        .collect();
    let momentum_terms: Vec<T> = state
        .workers
        .iter()
        .zip(&grads)
        .map(|(w, g)| w.momentum.sub(g).norm_sq())
        .collect();
    let gap = problem.value(x) - f_ref;
    let two = T::lit(2.0);
    let (gamma, beta, beta_hat) = (hp.gamma, hp.beta, hp.beta_hat);
    let a = two * gamma / (beta_hat * eta) * pairwise_sum_scalar(&shift_terms) / n;
    let b = T::lit(8.0) * gamma * beta / (beta_hat * beta_hat * eta * eta) * pairwise_sum_scalar(&momentum_terms) / n;
    let avg = state.momentum_mean().sub(&problem.grad(x)).norm_sq();
    let c = two * gamma / beta * avg;
    gap + a + b + c
}

/// Whether `||grad f(x)||^2 <= 2L (f(x) - f*)` holds, up to a relative
/// rounding allowance of `1e-12`.
pub fn smoothness_gradient_bound_check<T: Scalar>(problem: &dyn Problem<T>, x: &crate::vector::DenseVector<T>) -> Result<bool> {
    let f_star = problem
        .f_star()
        .ok_or_else(|| Error::DiagnosticUnavailable(format!("{} has no known optimal value", problem.name())))?;
    Ok(smoothness_gradient_bound_check_with_reference(problem, x, f_star))
}

/// [`smoothness_gradient_bound_check`] against a lower bound `f_ref <= f*`.
/// The inequality only weakens, so it still holds for any `L`-smooth problem.
pub fn smoothness_gradient_bound_check_with_reference<T: Scalar>(
    problem: &dyn Problem<T>,
    x: &crate::vector::DenseVector<T>,
    f_ref: T,
) -> bool {
    let lhs = problem.grad(x).norm_sq().to_f64_lossy();
    let rhs = 2.0 * problem.smoothness().to_f64_lossy() * (problem.value(x) - f_ref).to_f64_lossy();
    lhs <= rhs + 1e-12 * rhs.abs().max(lhs)
}

/// Lower bound on `E ||grad f(x^t)||^2` for the ideal-shift method on the
/// three-point counterexample: `min{||grad f(x0)||^2, tau^2/45} / 2`.
pub fn nonconvergence_floor(grad_norm_sq0: f64, tau: f64) -> f64 {
    0.5 * grad_norm_sq0.min(tau * tau / 45.0)
}

/// Window used by [`final_grad_norm`].
pub const FINAL_WINDOW: usize = 100;

/// Mean of `||grad f(x^t)||` over the last [`FINAL_WINDOW`] records.
pub fn final_grad_norm(records: &[RunRecord]) -> Option<f64> {
    final_mean(records, |r| r.grad_norm_sq.sqrt())
}

/// Mean of `||grad f(x^t)||^2` over the last [`FINAL_WINDOW`] records.
pub fn final_grad_norm_sq(records: &[RunRecord]) -> Option<f64> {
    final_mean(records, |r| r.grad_norm_sq)
}

fn final_mean(records: &[RunRecord], f: impl Fn(&RunRecord) -> f64) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let tail = &records[records.len().saturating_sub(FINAL_WINDOW)..];
    let vals: Vec<f64> = tail.iter().map(f).collect();
    Some(pairwise_sum_scalar(&vals) / vals.len() as f64)
}

/// Median of a sample; `None` when empty or any value is NaN.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

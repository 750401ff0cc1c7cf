//! Theory-driven parameter choices and privacy accounting, all in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// High-probability radii of the stochastic and DP noise over a run.
///
/// With `l = 3 log(6(T+1)/alpha)`:
///
/// ```text
/// a   = (sqrt 2 + 2 sqrt l) sqrt(d) sigma_omega sqrt(T/n)
/// b^2 = 2 sigma^2 log(12 (T+1) n / alpha)
/// c^2 = (sqrt 2 + 2 sqrt l)^2 sigma^2
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRadii {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Everything the stepsize rules need to know about a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub radii: NoiseRadii,
    /// Bound `B` on the initial local gradients (plus noise radius).
    pub big_b: f64,
    /// `eta = tau / B`.
    pub eta: f64,
    /// Initial Lyapunov gap `Delta`.
    pub delta: f64,
    /// Failure probability.
    pub alpha: f64,
}

impl TheoryConstants {
    pub fn new(radii: NoiseRadii, big_b: f64, tau: f64, delta: f64, alpha: f64) -> Result<Self> {
        if !(tau > 0.0 && big_b > 0.0 && delta >= 0.0) {
            return Err(Error::invalid("tau and B must be positive and Delta nonnegative"));
        }
        Ok(Self {
            radii,
            big_b,
            eta: tau / big_b,
            delta,
            alpha,
        })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be >= 0, got {v}")))
    }
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Computes `(a, b, c)` for `T` iterations, `n` workers in dimension `d`.
pub fn theory_constants(
    sigma: f64,
    sigma_omega: f64,
    steps: u64,
    n: usize,
    d: usize,
    alpha: f64,
) -> Result<NoiseRadii> {
    check_nonnegative("sigma", sigma)?;
    check_nonnegative("sigma_omega", sigma_omega)?;
    check_probability("alpha", alpha)?;
    if steps == 0 || n == 0 || d == 0 {
        return Err(Error::invalid("T, n and d must be positive"));
    }
    let t1 = steps as f64 + 1.0;
    let l = 3.0 * (6.0 * t1 / alpha).ln();
    let k = 2f64.sqrt() + 2.0 * l.sqrt();
    let a = k * (d as f64).sqrt() * sigma_omega * (steps as f64 / n as f64).sqrt();
    let b = (2.0 * sigma * sigma * (12.0 * t1 * n as f64 / alpha).ln()).sqrt();
    let c = k * sigma;
    Ok(NoiseRadii { a, b, c })
}

/// Where the initial gap `Delta` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeltaSource {
    /// A fixed value supplied by the caller.
    Fixed(f64),
    /// The Lyapunov function at the default initialization (`g = v = 0`),
    /// which depends on the stepsize being chosen:
    /// `f(x0) - f* + 8 gamma beta / (beta_hat^2 eta^2) mean ||grad f_i(x0)||^2
    ///  + 2 gamma / beta ||grad f(x0)||^2`.
    InitialPoint {
        f_gap: f64,
        mean_local_grad_sq: f64,
        grad_sq: f64,
    },
}

impl DeltaSource {
    fn eval(&self, gamma: f64, beta: f64, beta_hat: f64, eta: f64) -> f64 {
        match *self {
            DeltaSource::Fixed(d) => d,
            DeltaSource::InitialPoint {
                f_gap,
                mean_local_grad_sq,
                grad_sq,
            } => {
                let shift = if gamma > 0.0 {
                    8.0 * gamma * beta / (beta_hat * beta_hat * eta * eta) * mean_local_grad_sq
                } else {
                    0.0
                };
                let avg = if beta > 0.0 { 2.0 * gamma / beta * grad_sq } else { 0.0 };
                f_gap + shift + avg
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DeltaSource::Fixed(d) => check_nonnegative("Delta", d),
            DeltaSource::InitialPoint {
                f_gap,
                mean_local_grad_sq,
                grad_sq,
            } => {
                check_nonnegative("f(x0) - f*", f_gap)?;
                check_nonnegative("mean local gradient norm", mean_local_grad_sq)?;
                check_nonnegative("gradient norm", grad_sq)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicParams {
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    pub big_b: f64,
    /// `Delta` at the returned stepsize.
    pub delta: f64,
    /// Set when `B <= tau`: no clipping ever happens and the method reduces
    /// to gradient descent with momentum, so only `gamma <= 1/(12L)` applies.
    pub degenerate: bool,
}

/// The stepsize conditions for the full-gradient case with `beta = 4 L gamma`.
///
/// Returns one message per violated condition.
pub fn deterministic_violations(
    l: f64,
    big_b: f64,
    tau: f64,
    beta_hat: f64,
    gamma: f64,
    delta: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let beta = 4.0 * l * gamma;
    let eta = tau / big_b;
    let tol = 1e-12;
    if gamma > (1.0 + tol) / (12.0 * l) {
        out.push(format!("gamma = {gamma} exceeds 1/(12L)"));
    }
    if gamma > (1.0 + tol) * tau / (12.0 * big_b * l) {
        out.push(format!("gamma = {gamma} exceeds tau/(12BL)"));
    }
    let q = (32.0 * beta * beta * l * l + 96.0 * l * l) * gamma * gamma / (beta_hat * beta_hat * eta * eta);
    if 0.625 - q < -tol {
        out.push(format!("5/8 - {q} < 0"));
    }
    let lhs1 = 8.0 / 3.0 * beta * (l * delta).sqrt();
    if lhs1 > (1.0 + tol) * beta_hat * tau / 4.0 {
        out.push(format!("(8/3) beta sqrt(L Delta) = {lhs1} exceeds beta_hat tau / 4"));
    }
    let lhs2 = 1.75 * beta * (big_b - tau);
    if lhs2 > (1.0 + tol) * beta_hat * tau / 4.0 {
        out.push(format!("(7/4) beta (B - tau) = {lhs2} exceeds beta_hat tau / 4"));
    }
    out
}

/// Largest stepsize satisfying the full-gradient conditions, with
/// `beta = 4 L gamma`.
///
/// Every condition tightens as `gamma` grows, so the feasible set is an
/// interval `(0, gamma*]` and bisection finds `gamma*` to `1e-12` relative.
pub fn deterministic_params(
    l: f64,
    big_b: f64,
    tau: f64,
    beta_hat: f64,
    delta: DeltaSource,
) -> Result<DeterministicParams> {
    check_positive("L", l)?;
    check_positive("B", big_b)?;
    check_positive("tau", tau)?;
    if !(beta_hat > 0.0 && beta_hat <= 1.0) {
        return Err(Error::invalid(format!("beta_hat must lie in (0, 1], got {beta_hat}")));
    }
    delta.validate()?;
    let eta = tau / big_b;
    let cap = 1.0 / (12.0 * l);
    if big_b <= tau {
        let beta = 4.0 * l * cap;
        return Ok(DeterministicParams {
            gamma: cap,
            beta,
            eta,
            big_b,
            delta: delta.eval(cap, beta, beta_hat, eta),
            degenerate: true,
        });
    }
    if beta_hat > 1.0 / (2.0 * eta) {
        return Err(Error::invalid(format!(
            "beta_hat = {beta_hat} exceeds 1/(2 eta) = {}",
            1.0 / (2.0 * eta)
        )));
    }
    let feasible = |gamma: f64| {
        let beta = 4.0 * l * gamma;
        let d = delta.eval(gamma, beta, beta_hat, eta);
        deterministic_violations(l, big_b, tau, beta_hat, gamma, d).is_empty()
    };
    let hi0 = cap.min(tau / (12.0 * big_b * l));
    let gamma = if feasible(hi0) {
        hi0
    } else {
        let (mut lo, mut hi) = (0.0, hi0);
        for _ in 0..200 {
            if hi - lo <= 1e-12 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if gamma <= 0.0 {
        return Err(Error::invalid("no positive stepsize satisfies the conditions"));
    }
    let beta = 4.0 * l * gamma;
    Ok(DeterministicParams {
        gamma,
        beta,
        eta,
        big_b,
        delta: delta.eval(gamma, beta, beta_hat, eta),
        degenerate: false,
    })
}

/// Inputs to [`stochastic_params`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticInputs {
    pub l: f64,
    pub delta: f64,
    /// `B >= max_i ||grad f_i(x0)|| + b`.
    pub big_b: f64,
    pub tau: f64,
    pub radii: NoiseRadii,
    pub n: usize,
    pub steps: u64,
    pub sigma: f64,
    pub alpha: f64,
    /// Upper bound the caller wants on `beta_hat`.
    pub beta_hat_request: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticParams {
    pub gamma: f64,
    pub beta: f64,
    pub beta_hat: f64,
    pub eta: f64,
    /// The binding upper bound on `beta` before the stepsize caps.
    pub beta_bound: f64,
    /// True when there is neither stochastic nor DP noise and the
    /// full-gradient rule was used instead.
    pub deterministic_fallback: bool,
}

/// All upper bounds on `beta` in the stochastic analysis, tagged by name.
/// Bounds whose denominator vanishes (no noise of that kind) are omitted.
pub fn stochastic_beta_bounds(inp: &StochasticInputs, beta_hat: f64) -> Vec<(&'static str, f64)> {
    let StochasticInputs {
        l,
        delta,
        big_b,
        tau,
        n,
        steps,
        sigma,
        alpha,
        ..
    } = *inp;
    let NoiseRadii { b, c, .. } = inp.radii;
    let eta = tau / big_b;
    let ld = l * delta;
    let sld = ld.sqrt();
    let tf = steps as f64;
    let sn = (n as f64).sqrt();
    let st = tf.sqrt();
    let s2 = 2f64.sqrt();
    let mut out = vec![("one", 1.0)];
    if sld > 0.0 {
        out.push(("gap", 3.0 * beta_hat * tau / (64.0 * sld)));
    }
    if big_b > tau {
        out.push(("spread", beta_hat * tau / (14.0 * (big_b - tau))));
    }
    if b > 0.0 {
        out.push(("radius", beta_hat * tau / (22.0 * b)));
        out.push(("b-cubic", (ld * beta_hat * eta / (8.0 * tf * b * b)).cbrt()));
        out.push((
            "b-quartic",
            (ld * beta_hat * beta_hat * eta * eta / (32.0 * tf * b * b)).powf(0.25),
        ));
    }
    if c > 0.0 {
        out.push(("c-square", (ld * n as f64 / (8.0 * tf * c * c)).sqrt()));
    }
    if sigma > 0.0 {
        let b1 = (3.0 * (14.0 * (tf + 1.0) / alpha).ln()).sqrt();
        let k = s2 * (1.0 + b1) * sigma * st;
        let lin = 1.5 * (big_b - tau) + 1.5 * b;
        let wide = 3.0 * (big_b - tau + b);
        out.push((
            "two",
            (3.0 * ld * sn * beta_hat * eta / (16.0 * k * big_b)).sqrt(),
        ));
        out.push((
            "three",
            (3.0 * ld * beta_hat * eta * sn / (16.0 * k * ((9.0 * ld).sqrt() + lin))).cbrt(),
        ));
        out.push((
            "four",
            (9.0 * ld * beta_hat * eta * sn / (8.0 * k * (11.0 * sld + wide))).powf(0.25),
        ));
        out.push((
            "five",
            (3.0 * ld * beta_hat * beta_hat * eta * eta * sn / (64.0 * k * (3.0 * sld + lin))).cbrt(),
        ));
        out.push(("six", 3.0 * ld * sn / (16.0 * k * (3.0 * sld + lin))));
        out.push((
            "seven",
            (9.0 * ld * beta_hat * beta_hat * eta * eta * sn / (32.0 * k * (11.0 * sld + wide)))
                .powf(0.25),
        ));
        out.push(("eight", (9.0 * ld * sn / (k * (11.0 * sld + wide))).sqrt()));
    }
    out
}

/// Parameters for the stochastic (optionally private) setting with
/// `beta = 6 L gamma`.
///
/// `beta_hat = min{request, sqrt(L Delta)/a, 1}`, `beta` is the smallest of the
/// bounds in [`stochastic_beta_bounds`], and `gamma = beta / (6L)` is then
/// capped by `1/(12L)` and by the quadratic condition
/// `1/3 - (32 beta^2 L^2 + 96 L^2) gamma^2 / (beta_hat^2 eta^2) >= 0`.
pub fn stochastic_params(inp: &StochasticInputs) -> Result<StochasticParams> {
    check_positive("L", inp.l)?;
    check_nonnegative("Delta", inp.delta)?;
    check_positive("B", inp.big_b)?;
    check_positive("tau", inp.tau)?;
    check_nonnegative("sigma", inp.sigma)?;
    check_probability("alpha", inp.alpha)?;
    if inp.steps == 0 || inp.n == 0 {
        return Err(Error::invalid("T and n must be positive"));
    }
    if !(inp.beta_hat_request > 0.0 && inp.beta_hat_request <= 1.0) {
        return Err(Error::invalid(format!(
            "requested beta_hat must lie in (0, 1], got {}",
            inp.beta_hat_request
        )));
    }
    let NoiseRadii { a, b, .. } = inp.radii;
    let l = inp.l;
    let eta = inp.tau / inp.big_b;
    let mut beta_hat = inp.beta_hat_request.min(1.0);
    if a > 0.0 {
        beta_hat = beta_hat.min((l * inp.delta).sqrt() / a);
    }
    if !(beta_hat > 0.0) {
        return Err(Error::invalid("beta_hat collapsed to zero; Delta must be positive"));
    }
    if inp.sigma == 0.0 && a == 0.0 && b == 0.0 {
        let det = deterministic_params(l, inp.big_b, inp.tau, beta_hat, DeltaSource::Fixed(inp.delta))?;
        return Ok(StochasticParams {
            gamma: det.gamma,
            beta: det.beta,
            beta_hat,
            eta: det.eta,
            beta_bound: det.beta,
            deterministic_fallback: true,
        });
    }
    if inp.big_b <= inp.tau {
        return Err(Error::invalid("B must exceed tau"));
    }
    let beta_bound = stochastic_beta_bounds(inp, beta_hat)
        .into_iter()
        .map(|(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let quad_ok = |gamma: f64| {
        let beta = 6.0 * l * gamma;
        1.0 / 3.0 - (32.0 * beta * beta * l * l + 96.0 * l * l) * gamma * gamma / (beta_hat * beta_hat * eta * eta)
            >= 0.0
    };
    let mut gamma = (beta_bound / (6.0 * l)).min(1.0 / (12.0 * l));
    if !quad_ok(gamma) {
        let (mut lo, mut hi) = (0.0, gamma);
        for _ in 0..200 {
            if hi - lo <= 1e-12 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if quad_ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        gamma = lo;
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid("no positive stepsize satisfies the conditions"));
    }
    Ok(StochasticParams {
        gamma,
        beta: 6.0 * l * gamma,
        beta_hat,
        eta,
        beta_bound,
        deterministic_fallback: false,
    })
}

/// Noise level giving `(eps, delta)`-DP for `T` iterations at clipping level
/// `tau`: `sigma_omega = (8 tau / eps) sqrt(T log(5T/(4 delta)) log(1/delta))`.
pub fn dp_sigma(tau: f64, eps: f64, delta: f64, steps: u64) -> Result<f64> {
    check_positive("tau", tau)?;
    check_probability("epsilon", eps)?;
    check_probability("delta", delta)?;
    if steps == 0 {
        return Err(Error::invalid("T must be positive"));
    }
    let t = steps as f64;
    let inner = t * (5.0 * t / (4.0 * delta)).ln() * (1.0 / delta).ln();
    if !(inner > 0.0) {
        return Err(Error::invalid("T log(5T/(4 delta)) log(1/delta) must be positive"));
    }
    Ok(8.0 * tau / eps * inner.sqrt())
}

/// Per-step budget whose `T`-fold advanced composition stays within
/// `(eps, delta)`: `eps~ = eps / (2 sqrt(2 T log(1/delta)))`, `delta~ = delta/T`.
pub fn per_step_budget(eps: f64, delta: f64, steps: u64) -> Result<(f64, f64)> {
    check_positive("epsilon", eps)?;
    check_probability("delta", delta)?;
    if steps == 0 {
        return Err(Error::invalid("T must be positive"));
    }
    let t = steps as f64;
    Ok((eps / (2.0 * (2.0 * t * (1.0 / delta).ln()).sqrt()), delta / t))
}

/// Per-step epsilon of the Gaussian mechanism with sensitivity `2 tau` (two
/// clipped vectors differ by at most that much) at noise `sigma_omega`:
/// `eps~ = 2 tau sqrt(2 ln(1.25/delta~)) / sigma_omega`.
pub fn gaussian_mechanism_epsilon(tau: f64, sigma_omega: f64, delta_step: f64) -> Result<f64> {
    check_positive("tau", tau)?;
    check_positive("sigma_omega", sigma_omega)?;
    check_probability("per-step delta", delta_step)?;
    Ok(2.0 * tau * (2.0 * (1.25 / delta_step).ln()).sqrt() / sigma_omega)
}

/// Privacy spent so far under homogeneous advanced composition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    pub steps: u64,
    /// Slack `delta'` of the composition theorem.
    pub delta_prime: f64,
}

impl PrivacySpend {
    pub fn none(delta_prime: f64) -> Self {
        Self {
            epsilon: 0.0,
            delta: 0.0,
            steps: 0,
            delta_prime,
        }
    }
}

/// Composes `steps` more mechanisms, each `(eps~, delta~)`-DP, onto `spend`.
///
/// `k`-fold composition is `(sqrt(2k log(1/delta')) eps~ + k eps~ (e^eps~ - 1),
/// k delta~ + delta')`. The bound is not additive across calls, so `spend`
/// must come from the same per-step budget; the result is recomputed for the
/// new total step count.
pub fn account(spend: &PrivacySpend, per_step: (f64, f64), steps: u64) -> Result<PrivacySpend> {
    let (eps, delta) = per_step;
    check_nonnegative("per-step epsilon", eps)?;
    check_nonnegative("per-step delta", delta)?;
    check_probability("delta'", spend.delta_prime)?;
    let k = spend.steps + steps;
    if k == 0 {
        return Ok(PrivacySpend::none(spend.delta_prime));
    }
    let kf = k as f64;
    let epsilon = (2.0 * kf * (1.0 / spend.delta_prime).ln()).sqrt() * eps + kf * eps * eps.exp_m1();
    Ok(PrivacySpend {
        epsilon,
        delta: kf * delta + spend.delta_prime,
        steps: k,
        delta_prime: spend.delta_prime,
    })
}

/// Per-step accountant used while a run is recorded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccountant {
    pub per_step_epsilon: f64,
    pub per_step_delta: f64,
    pub delta_prime: f64,
}

impl PrivacyAccountant {
    /// Accountant for Gaussian noise `sigma_omega` at clipping level `tau`,
    /// with the per-step delta set to `delta / T` and `delta' = delta`.
    pub fn gaussian(tau: f64, sigma_omega: f64, delta: f64, steps: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("T must be positive"));
        }
        let per_step_delta = delta / steps as f64;
        Ok(Self {
            per_step_epsilon: gaussian_mechanism_epsilon(tau, sigma_omega, per_step_delta)?,
            per_step_delta,
            delta_prime: delta,
        })
    }

    pub fn spend_after(&self, steps: u64) -> Result<PrivacySpend> {
        account(
            &PrivacySpend::none(self.delta_prime),
            (self.per_step_epsilon, self.per_step_delta),
            steps,
        )
    }
}

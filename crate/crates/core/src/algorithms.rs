//! The optimizers, all behind one step interface.
//!
//! | tag            | method                                                 |
//! |----------------|--------------------------------------------------------|
//! | `clip_sgd`     | clip each local stochastic gradient, average, step     |
//! | `clip21_sgd`   | error feedback on clipped gradient differences         |
//! | `clip21_sgd2m` | client momentum + damped server accumulation, DP noise |
//! | `clip21_ideal` | Clip21-SGD shifted by the true local gradient          |
//! | `sgdm`         | distributed SGD with heavy-ball momentum               |
//!
//! Per-worker work inside a step may run on the rayon pool. Results are
//! collected in worker order and reduced with [`pairwise_mean`], and every
//! random draw comes from a counter-addressed substream, so the iterates do
//! not depend on the thread count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::{clip_unchecked, is_clipping_active};
use crate::diagnostics::{self, DiagnosticsConfig, RunRecord};
use crate::error::{Error, Result};
use crate::oracles::GradientOracle;
use crate::problems::Problem;
use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;
use crate::vector::{pairwise_mean, DenseVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ClipSgd,
    Clip21Sgd,
    Clip21Sgd2m,
    Clip21Ideal,
    Sgdm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::ClipSgd,
        Algorithm::Clip21Sgd,
        Algorithm::Clip21Sgd2m,
        Algorithm::Clip21Ideal,
        Algorithm::Sgdm,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::ClipSgd => "clip_sgd",
            Algorithm::Clip21Sgd => "clip21_sgd",
            Algorithm::Clip21Sgd2m => "clip21_sgd2m",
            Algorithm::Clip21Ideal => "clip21_ideal",
            Algorithm::Sgdm => "sgdm",
        }
    }

    pub fn uses_beta(self) -> bool {
        matches!(self, Algorithm::Clip21Sgd2m)
    }

    pub fn uses_beta_hat(self) -> bool {
        matches!(self, Algorithm::Clip21Sgd2m | Algorithm::Sgdm)
    }

    pub fn uses_tau(self) -> bool {
        !matches!(self, Algorithm::Sgdm)
    }

    /// Whether the method itself specifies local DP noise.
    pub fn has_dp_noise(self) -> bool {
        matches!(self, Algorithm::Clip21Sgd2m)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    /// Stepsize.
    pub gamma: T,
    /// Clipping level.
    pub tau: T,
    /// Client momentum (Clip21-SGD2M only).
    pub beta: T,
    /// Server momentum (Clip21-SGD2M and SGDM).
    pub beta_hat: T,
    /// Standard deviation of the local DP noise.
    pub sigma_omega: T,
}

impl<T: Scalar> HyperParams<T> {
    pub fn new(gamma: T, tau: T) -> Self {
        Self {
            gamma,
            tau,
            beta: T::one(),
            beta_hat: T::one(),
            sigma_omega: T::zero(),
        }
    }

    pub fn with_momentum(mut self, beta: T, beta_hat: T) -> Self {
        self.beta = beta;
        self.beta_hat = beta_hat;
        self
    }

    pub fn with_dp_noise(mut self, sigma_omega: T) -> Self {
        self.sigma_omega = sigma_omega;
        self
    }

    /// Checks the ranges of the fields `algorithm` reads.
    pub fn validate(&self, algorithm: Algorithm) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > T::zero() && self.gamma.is_finite()) {
            problems.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if algorithm.uses_tau() && !(self.tau > T::zero()) {
            problems.push(format!("tau must be positive, got {}", self.tau));
        }
        let unit = |v: T| v > T::zero() && v <= T::one();
        if algorithm.uses_beta() && !unit(self.beta) {
            problems.push(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if algorithm.uses_beta_hat() && !unit(self.beta_hat) {
            problems.push(format!("beta_hat must lie in (0, 1], got {}", self.beta_hat));
        }
        if !(self.sigma_omega >= T::zero() && self.sigma_omega.is_finite()) {
            problems.push(format!("sigma_omega must be >= 0, got {}", self.sigma_omega));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }
}

/// Per-worker state.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState<T> {
    /// Shift `g_i`.
    pub shift: DenseVector<T>,
    /// Momentum buffer `v_i` (Clip21-SGD2M).
    pub momentum: DenseVector<T>,
    /// The vector fed to the clipping operator in the last step; empty when
    /// the method did not clip.
    pub residual: DenseVector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub x: DenseVector<T>,
    /// Server direction `g`.
    pub g: DenseVector<T>,
    pub workers: Vec<WorkerState<T>>,
    /// Running sum over steps of the worker-averaged DP noise.
    pub omega_sum: DenseVector<T>,
    pub t: u64,
    /// Seed of the DP-noise substreams.
    pub dp_seed: u64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Default initialization: `g = g_i = v_i = 0` at `x0`.
    pub fn new(x0: DenseVector<T>, n_workers: usize, dp_seed: u64) -> Self {
        let d = x0.len();
        Self {
            x: x0,
            g: DenseVector::zeros(d),
            workers: (0..n_workers)
                .map(|_| WorkerState {
                    shift: DenseVector::zeros(d),
                    momentum: DenseVector::zeros(d),
                    residual: DenseVector::zeros(0),
                })
                .collect(),
            omega_sum: DenseVector::zeros(d),
            t: 0,
            dp_seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    /// Mean of the worker shifts.
    pub fn shift_mean(&self) -> DenseVector<T> {
        let parts: Vec<_> = self.workers.iter().map(|w| w.shift.clone()).collect();
        pairwise_mean(&parts, self.dim())
    }

    /// Mean of the worker momentum buffers.
    pub fn momentum_mean(&self) -> DenseVector<T> {
        let parts: Vec<_> = self.workers.iter().map(|w| w.momentum.clone()).collect();
        pairwise_mean(&parts, self.dim())
    }

    /// Number of workers whose last clipping input exceeded `tau`.
    pub fn clip_active(&self, tau: T) -> usize {
        self.workers
            .iter()
            .filter(|w| !w.residual.is_empty() && is_clipping_active(&w.residual, tau))
            .count()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.g.is_finite()
    }

    fn check_against(&self, problem: &dyn Problem<T>) -> Result<()> {
        if self.dim() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                found: self.dim(),
            });
        }
        if self.n_workers() != problem.n_workers() {
            return Err(Error::DimensionMismatch {
                expected: problem.n_workers(),
                found: self.n_workers(),
            });
        }
        Ok(())
    }
}

fn for_each_worker<T, R, F>(workers: &mut [WorkerState<T>], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Scalar,
    R: Send,
    F: Fn(usize, &mut WorkerState<T>) -> Result<R> + Sync + Send,
{
    if parallel && workers.len() > 1 {
        workers
            .par_iter_mut()
            .enumerate()
            .map(|(i, w)| f(i, w))
            .collect()
    } else {
        workers.iter_mut().enumerate().map(|(i, w)| f(i, w)).collect()
    }
}

fn dp_noise<T: Scalar>(seed: u64, worker: usize, t: u64, d: usize, sigma: T) -> DenseVector<T> {
    RngStream::new(seed, worker, Purpose::DpNoise).gaussian_vector(t, d, sigma)
}

/// One Clip-SGD step: `g_i = clip(grad f_i(x^t, xi)) [+ omega_i]`,
/// `g = mean g_i`, `x^{t+1} = x^t - gamma g`.
///
/// The method has no DP noise of its own; a positive `sigma_omega` adds noise
/// to each clipped gradient.
pub fn clip_sgd_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    state.check_against(problem)?;
    let t = state.t;
    let d = state.dim();
    let x = &state.x;
    let seed = state.dp_seed;
    let out = for_each_worker(&mut state.workers, parallel, |i, w| {
        let draw = oracle.draw(problem, i, x, t)?;
        let mut gi = clip_unchecked(&draw, hp.tau);
        w.residual = draw;
        let omega = if hp.sigma_omega > T::zero() {
            let omega = dp_noise(seed, i, t, d, hp.sigma_omega);
            gi.add_assign(&omega);
            Some(omega)
        } else {
            None
        };
        w.shift = gi.clone();
        Ok((gi, omega))
    })?;
    let (gs, omegas): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    state.g = pairwise_mean(&gs, d);
    state.x.axpy(-hp.gamma, &state.g);
    accumulate_noise(state, omegas);
    state.t += 1;
    Ok(())
}

/// One Clip21-SGD step: `x^{t+1} = x^t - gamma g^t`, then
/// `c_i = clip(grad f_i(x^{t+1}, xi) - g_i)`, `g_i += c_i`, `g += mean c_i`.
pub fn clip21_sgd_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    state.check_against(problem)?;
    let t_next = state.t + 1;
    let d = state.dim();
    state.x.axpy(-hp.gamma, &state.g);
    let x = &state.x;
    let cs = for_each_worker(&mut state.workers, parallel, |i, w| {
        let draw = oracle.draw(problem, i, x, t_next)?;
        let diff = draw.sub(&w.shift);
        let c = clip_unchecked(&diff, hp.tau);
        w.shift.add_assign(&c);
        w.residual = diff;
        Ok(c)
    })?;
    state.g.add_assign(&pairwise_mean(&cs, d));
    state.t = t_next;
    Ok(())
}

/// One Clip21-SGD2M step:
///
/// ```text
/// x^{t+1}   = x^t - gamma g^t
/// v_i^{t+1} = (1 - beta) v_i^t + beta grad f_i(x^{t+1}, xi)
/// k_i       = clip(v_i^{t+1} - g_i^t)
/// c_i       = k_i + omega_i,            omega_i ~ N(0, sigma_omega^2 I)
/// g_i^{t+1} = g_i^t + beta_hat k_i
/// g^{t+1}   = g^t + beta_hat mean c_i
/// ```
///
/// `omega_sum` accumulates `mean omega_i`, so `g = mean g_i + beta_hat omega_sum`.
pub fn clip21_sgd2m_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    state.check_against(problem)?;
    let t_next = state.t + 1;
    let d = state.dim();
    let seed = state.dp_seed;
    state.x.axpy(-hp.gamma, &state.g);
    let x = &state.x;
    let keep = T::one() - hp.beta;
    let out = for_each_worker(&mut state.workers, parallel, |i, w| {
        let draw = oracle.draw(problem, i, x, t_next)?;
        w.momentum.lerp_mut(keep, hp.beta, &draw);
        let diff = w.momentum.sub(&w.shift);
        let mut c = clip_unchecked(&diff, hp.tau);
        w.shift.axpy(hp.beta_hat, &c);
        w.residual = diff;
        // drawn for every worker, clipped difference zero or not
        let omega = dp_noise(seed, i, t_next, d, hp.sigma_omega);
        let omega = if hp.sigma_omega > T::zero() {
            c.add_assign(&omega);
            Some(omega)
        } else {
            None
        };
        Ok((c, omega))
    })?;
    let (cs, omegas): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    state.g.axpy(hp.beta_hat, &pairwise_mean(&cs, d));
    accumulate_noise(state, omegas);
    state.t = t_next;
    Ok(())
}

/// One step of the ideal-shift variant: `x^{t+1} = x^t - gamma g^t` with
/// `g^t = mean g_i^t`, then
/// `g_i^{t+1} = grad f_i(x^{t+1}) + clip(grad f_i(x^{t+1}, xi) - grad f_i(x^{t+1}))`.
pub fn clip21_ideal_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    state.check_against(problem)?;
    let t_next = state.t + 1;
    state.x.axpy(-hp.gamma, &state.g);
    ideal_shifts(state, problem, oracle, hp, t_next, parallel)?;
    state.t = t_next;
    Ok(())
}

fn ideal_shifts<T: Scalar>(
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    t: u64,
    parallel: bool,
) -> Result<()> {
    let d = state.dim();
    let x = &state.x;
    let gs = for_each_worker(&mut state.workers, parallel, |i, w| {
        let exact = problem.local_grad(i, x);
        let draw = oracle.draw(problem, i, x, t)?;
        let diff = draw.sub(&exact);
        let gi = exact.add(&clip_unchecked(&diff, hp.tau));
        w.residual = diff;
        w.shift = gi.clone();
        Ok(gi)
    })?;
    state.g = pairwise_mean(&gs, d);
    Ok(())
}

/// One heavy-ball SGD step: `g^{t+1} = (1 - beta_hat) g^t + beta_hat mean draw_i`.
///
/// Written in the same shift form as Clip21-SGD2M (each worker keeps its own
/// momentum `g_i` and the server adds `beta_hat mean(draw_i - g_i)`), so it
/// coincides bit for bit with Clip21-SGD2M at `beta = 1`, `sigma_omega = 0`
/// and an infinite clipping level.
pub fn sgdm_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    state.check_against(problem)?;
    let t_next = state.t + 1;
    let d = state.dim();
    state.x.axpy(-hp.gamma, &state.g);
    let x = &state.x;
    let diffs = for_each_worker(&mut state.workers, parallel, |i, w| {
        let draw = oracle.draw(problem, i, x, t_next)?;
        let diff = draw.sub(&w.shift);
        w.shift.axpy(hp.beta_hat, &diff);
        Ok(diff)
    })?;
    state.g.axpy(hp.beta_hat, &pairwise_mean(&diffs, d));
    state.t = t_next;
    Ok(())
}

fn accumulate_noise<T: Scalar>(state: &mut OptimizerState<T>, omegas: Vec<Option<DenseVector<T>>>) {
    let omegas: Vec<_> = omegas.into_iter().flatten().collect();
    if !omegas.is_empty() {
        let d = state.dim();
        state.omega_sum.add_assign(&pairwise_mean(&omegas, d));
    }
}

/// Dispatches one step of `algorithm`.
pub fn step<T: Scalar>(
    algorithm: Algorithm,
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    match algorithm {
        Algorithm::ClipSgd => clip_sgd_step(state, problem, oracle, hp, parallel),
        Algorithm::Clip21Sgd => clip21_sgd_step(state, problem, oracle, hp, parallel),
        Algorithm::Clip21Sgd2m => clip21_sgd2m_step(state, problem, oracle, hp, parallel),
        Algorithm::Clip21Ideal => clip21_ideal_step(state, problem, oracle, hp, parallel),
        Algorithm::Sgdm => sgdm_step(state, problem, oracle, hp, parallel),
    }
}

/// Prepares a default-initialized state for `algorithm`. Only the ideal-shift
/// variant needs work here: its shifts at `x^0` come from step-0 draws.
pub fn initialize<T: Scalar>(
    algorithm: Algorithm,
    state: &mut OptimizerState<T>,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: &HyperParams<T>,
    parallel: bool,
) -> Result<()> {
    state.check_against(problem)?;
    if algorithm == Algorithm::Clip21Ideal {
        ideal_shifts(state, problem, oracle, hp, 0, parallel)?;
        for w in &mut state.workers {
            w.residual = DenseVector::zeros(0);
        }
    }
    Ok(())
}

/// One optimizer run: algorithm, problem, oracle, hyperparameters and state.
pub struct Simulation<'a, T> {
    algorithm: Algorithm,
    problem: &'a dyn Problem<T>,
    oracle: &'a GradientOracle<T>,
    hp: HyperParams<T>,
    state: OptimizerState<T>,
    parallel: bool,
}

impl<'a, T: Scalar> Simulation<'a, T> {
    /// Validates the inputs and initializes the default state at `x0`.
    pub fn new(
        algorithm: Algorithm,
        problem: &'a dyn Problem<T>,
        oracle: &'a GradientOracle<T>,
        hp: HyperParams<T>,
        x0: DenseVector<T>,
        dp_seed: u64,
    ) -> Result<Self> {
        hp.validate(algorithm)?;
        oracle.check_compatible(problem)?;
        if x0.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                found: x0.len(),
            });
        }
        if !x0.is_finite() {
            return Err(Error::invalid("initial point must be finite"));
        }
        let mut state = OptimizerState::new(x0, problem.n_workers(), dp_seed);
        initialize(algorithm, &mut state, problem, oracle, &hp, true)?;
        Ok(Self {
            algorithm,
            problem,
            oracle,
            hp,
            state,
            parallel: true,
        })
    }

    /// Replaces the default `g^0 = v^0 = 0` with a common server direction
    /// `g0` (also every worker's shift) and a common momentum `v0`.
    pub fn with_initial_direction(mut self, g0: DenseVector<T>, v0: DenseVector<T>) -> Result<Self> {
        let d = self.state.dim();
        for v in [&g0, &v0] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
        }
        if self.algorithm == Algorithm::Clip21Ideal {
            return Err(Error::invalid("the ideal-shift variant derives its shifts from x0"));
        }
        for w in &mut self.state.workers {
            w.shift = g0.clone();
            w.momentum = v0.clone();
        }
        self.state.g = g0;
        Ok(self)
    }

    /// Evaluate workers sequentially even when a rayon pool is available.
    /// Results are identical either way.
    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn problem(&self) -> &'a dyn Problem<T> {
        self.problem
    }

    pub fn hyper_params(&self) -> &HyperParams<T> {
        &self.hp
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    pub fn into_state(self) -> OptimizerState<T> {
        self.state
    }

    /// Advances one step. A non-finite iterate or direction is reported as
    /// divergence at the new step index.
    pub fn step(&mut self) -> Result<()> {
        step(
            self.algorithm,
            &mut self.state,
            self.problem,
            self.oracle,
            &self.hp,
            self.parallel,
        )?;
        if !self.state.is_finite() {
            return Err(Error::Divergence { step: self.state.t });
        }
        Ok(())
    }

    /// Metrics for the current state.
    pub fn record(&self, config: &DiagnosticsConfig<T>, wall_ns: u64) -> RunRecord {
        diagnostics::record(self, config, wall_ns)
    }

    /// Applies `steps` steps, returning one record per step for the states
    /// `x^1, ..., x^steps`.
    pub fn run(&mut self, steps: usize, config: &DiagnosticsConfig<T>) -> Result<Vec<RunRecord>> {
        if steps == 0 {
            return Err(Error::invalid("number of iterations must be at least 1"));
        }
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            let start = Instant::now();
            self.step()?;
            let wall_ns = u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX);
            records.push(self.record(config, wall_ns));
        }
        Ok(records)
    }
}

/// Builds a [`Simulation`] at `x0` and runs it for `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn run<T: Scalar>(
    algorithm: Algorithm,
    problem: &dyn Problem<T>,
    oracle: &GradientOracle<T>,
    hp: HyperParams<T>,
    x0: DenseVector<T>,
    dp_seed: u64,
    steps: usize,
    config: &DiagnosticsConfig<T>,
) -> Result<Vec<RunRecord>> {
    if steps == 0 {
        return Err(Error::invalid("number of iterations must be at least 1"));
    }
    Simulation::new(algorithm, problem, oracle, hp, x0, dp_seed)?.run(steps, config)
}

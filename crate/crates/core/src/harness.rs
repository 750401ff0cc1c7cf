//! Experiment orchestration: run configs, tuning sweeps, the counterexample
//! experiments and CSV output.
//!
//! A run config is a TOML file:
//!
//! ```toml
//! T = 1000            # iterations
//! seed = 7            # oracle and DP-noise seed
//! out = "run.csv"     # optional
//! threads = 4         # optional worker-thread count
//! x0 = [0.0, -1.0]    # optional, zeros by default
//! algorithm = "clip21_sgd2m"
//!
//! [problem]
//! kind = "logreg"     # or "chen", "quadratic"
//! dataset = "../data/synthetic.libsvm"   # relative to the config file
//! lambda = 0.001
//! n_workers = 10
//!
//! [oracle]
//! kind = "minibatch"  # or "exact", "gaussian", "three_point"
//! batch_fraction = 0.25
//!
//! [hyper]
//! mode = "manual"     # or "auto"
//! gamma = 0.5
//! tau = 0.01
//! beta = 0.5
//! beta_hat = 1.0
//!
//! [privacy]           # optional
//! delta = 1e-5
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, HyperParams, Simulation};
use crate::calibration::{
    deterministic_params, dp_sigma, stochastic_params, theory_constants, DeltaSource, PrivacyAccountant,
    StochasticInputs,
};
use crate::diagnostics::{final_grad_norm, final_grad_norm_sq, median, nonconvergence_floor, DiagnosticsConfig, RunRecord};
use crate::error::{Error, Result};
use crate::oracles::{GradientOracle, OracleKind};
use crate::problems::{chen_example, load_libsvm, scaled_quadratic, NonconvexLogReg, Problem};
use crate::vector::DenseVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Chen,
    Quadratic {
        smoothness: f64,
        dim: usize,
        n_workers: usize,
    },
    Logreg {
        dataset: PathBuf,
        #[serde(default = "default_lambda")]
        lambda: f64,
        n_workers: usize,
        #[serde(default)]
        partition_seed: u64,
        /// Scale every row to unit norm before partitioning.
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

impl ProblemSpec {
    fn with_workers(&self, n: usize) -> Result<Self> {
        Ok(match self.clone() {
            ProblemSpec::Chen => return Err(Error::invalid("the chen problem has exactly two workers")),
            ProblemSpec::Quadratic { smoothness, dim, .. } => ProblemSpec::Quadratic {
                smoothness,
                dim,
                n_workers: n,
            },
            ProblemSpec::Logreg {
                dataset,
                lambda,
                partition_seed,
                normalize,
                ..
            } => ProblemSpec::Logreg {
                dataset,
                lambda,
                n_workers: n,
                partition_seed,
                normalize,
            },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    #[default]
    Exact,
    Gaussian {
        sigma: f64,
    },
    Minibatch {
        batch_fraction: f64,
    },
    ThreePoint {
        sigma: f64,
        #[serde(default = "default_batch")]
        batch: usize,
    },
}

fn default_batch() -> usize {
    1
}

impl OracleSpec {
    fn kind(&self) -> OracleKind<f64> {
        match *self {
            OracleSpec::Exact => OracleKind::Exact,
            OracleSpec::Gaussian { sigma } => OracleKind::AdditiveGaussian { sigma },
            OracleSpec::Minibatch { batch_fraction } => OracleKind::Minibatch { batch_fraction },
            OracleSpec::ThreePoint { sigma, batch } => OracleKind::ThreePoint { sigma, batch },
        }
    }

    /// Noise scale known from the config alone.
    fn sigma(&self) -> Option<f64> {
        match *self {
            OracleSpec::Exact => Some(0.0),
            OracleSpec::Gaussian { sigma } | OracleSpec::ThreePoint { sigma, .. } => Some(sigma),
            OracleSpec::Minibatch { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperSpec {
    Manual {
        gamma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "one")]
        beta_hat: f64,
        #[serde(default)]
        sigma_omega: f64,
    },
    /// Parameters from the calibration rules.
    Auto {
        tau: f64,
        #[serde(default = "one")]
        beta_hat: f64,
        /// Failure probability of the high-probability bounds.
        #[serde(default = "default_alpha")]
        alpha: f64,
        /// Initial gap; computed at `x0` when absent.
        delta: Option<f64>,
        /// Fixed DP noise; overridden by `[privacy] epsilon`.
        sigma_omega: Option<f64>,
        /// Noise scale of oracles that do not state one (minibatch).
        noise_sigma: Option<f64>,
    },
}

fn default_tau() -> f64 {
    crate::TAU_INFINITY
}

fn one() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.1
}

impl HyperSpec {
    pub fn tau(&self) -> f64 {
        match *self {
            HyperSpec::Manual { tau, .. } | HyperSpec::Auto { tau, .. } => tau,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    /// Target epsilon; when set with `mode = "auto"`, `sigma_omega` is
    /// calibrated to it.
    pub epsilon: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    pub hyper: HyperSpec,
    pub privacy: Option<PrivacySpec>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Configuration(e.message().to_string()))?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks every field that can be checked without running, collecting
    /// all problems into one [`Error::Validation`]. Returns warnings on
    /// success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut errs = Vec::new();
        let mut warnings = Vec::new();
        if self.steps == 0 {
            errs.push("T: must be at least 1".to_string());
        }
        if self.threads == Some(0) {
            errs.push("threads: must be at least 1".to_string());
        }
        match &self.problem {
            ProblemSpec::Chen => {}
            ProblemSpec::Quadratic {
                smoothness,
                dim,
                n_workers,
            } => {
                if !(*smoothness > 0.0 && smoothness.is_finite()) {
                    errs.push(format!("problem.smoothness: must be positive, got {smoothness}"));
                }
                if *dim == 0 {
                    errs.push("problem.dim: must be at least 1".into());
                }
                if *n_workers == 0 {
                    errs.push("problem.n_workers: must be at least 1".into());
                }
            }
            ProblemSpec::Logreg {
                dataset,
                lambda,
                n_workers,
                ..
            } => {
                let path = self.resolve_path(dataset);
                if !path.is_file() {
                    errs.push(format!("problem.dataset: {} does not exist", path.display()));
                }
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    errs.push(format!("problem.lambda: must be >= 0, got {lambda}"));
                }
                if *n_workers == 0 {
                    errs.push("problem.n_workers: must be at least 1".into());
                }
            }
        }
        if let Err(e) = GradientOracle::new(self.oracle.kind(), self.seed) {
            errs.push(format!("oracle: {e}"));
        }
        if matches!(self.oracle, OracleSpec::Minibatch { .. }) && !matches!(self.problem, ProblemSpec::Logreg { .. }) {
            errs.push("oracle.kind: minibatch sampling needs a data-backed problem".into());
        }
        let sigma_omega = match &self.hyper {
            HyperSpec::Manual {
                gamma,
                tau,
                beta,
                beta_hat,
                sigma_omega,
            } => {
                let hp = HyperParams {
                    gamma: *gamma,
                    tau: *tau,
                    beta: *beta,
                    beta_hat: *beta_hat,
                    sigma_omega: *sigma_omega,
                };
                if let Err(e) = hp.validate(self.algorithm) {
                    errs.push(format!("hyper: {e}"));
                }
                *sigma_omega
            }
            HyperSpec::Auto {
                tau,
                beta_hat,
                alpha,
                delta,
                sigma_omega,
                noise_sigma,
            } => {
                if !(*tau > 0.0) {
                    errs.push(format!("hyper.tau: must be positive, got {tau}"));
                }
                if !(*beta_hat > 0.0 && *beta_hat <= 1.0) {
                    errs.push(format!("hyper.beta_hat: must lie in (0, 1], got {beta_hat}"));
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    errs.push(format!("hyper.alpha: must lie in (0, 1), got {alpha}"));
                }
                if delta.is_some_and(|d| !(d > 0.0)) {
                    errs.push("hyper.delta: must be positive".into());
                }
                if self.oracle.sigma().is_none() && noise_sigma.is_none() {
                    errs.push("hyper.noise_sigma: required by mode = \"auto\" with a minibatch oracle".into());
                }
                let eps = self.privacy.as_ref().and_then(|p| p.epsilon);
                if eps.is_some() { 1.0 } else { sigma_omega.unwrap_or(0.0) }
            }
        };
        if let Some(p) = &self.privacy {
            if !(p.delta > 0.0 && p.delta < 1.0) {
                errs.push(format!("privacy.delta: must lie in (0, 1), got {}", p.delta));
            }
            if p.epsilon.is_some_and(|e| !(e > 0.0 && e < 1.0)) {
                errs.push("privacy.epsilon: must lie in (0, 1)".into());
            }
            if p.epsilon.is_some() && matches!(self.hyper, HyperSpec::Manual { .. }) {
                warnings.push("privacy.epsilon is only used with mode = \"auto\"; sigma_omega is taken as given".into());
            }
        }
        if sigma_omega > 0.0 {
            match self.algorithm {
                Algorithm::Clip21Sgd2m => {}
                Algorithm::ClipSgd => warnings.push(
                    "clip_sgd has no DP noise of its own; Gaussian noise is added to each clipped gradient".into(),
                ),
                other => warnings.push(format!("{other} does not use DP noise; sigma_omega is ignored")),
            }
        }
        if errs.is_empty() {
            Ok(warnings)
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Builds the problem a spec describes.
pub fn build_problem(spec: &ProblemSpec, base_dir: &Path) -> Result<Arc<dyn Problem<f64>>> {
    Ok(match spec {
        ProblemSpec::Chen => Arc::new(chen_example()),
        ProblemSpec::Quadratic {
            smoothness,
            dim,
            n_workers,
        } => Arc::new(scaled_quadratic(*smoothness, *dim, *n_workers)?),
        ProblemSpec::Logreg {
            dataset,
            lambda,
            n_workers,
            partition_seed,
            normalize,
        } => {
            let path = if dataset.is_absolute() {
                dataset.clone()
            } else {
                base_dir.join(dataset)
            };
            let mut data = load_libsvm::<f64>(&path)?;
            if *normalize {
                data = data.normalize_rows();
            }
            let shards = data.partition(*n_workers, *partition_seed)?;
            Arc::new(NonconvexLogReg::new(shards, *lambda)?)
        }
    })
}

/// Everything a single run needs, after calibration.
#[derive(Clone)]
pub struct ResolvedRun {
    pub problem: Arc<dyn Problem<f64>>,
    pub oracle: GradientOracle<f64>,
    pub algorithm: Algorithm,
    pub hp: HyperParams<f64>,
    pub x0: DenseVector<f64>,
    pub steps: usize,
    pub seed: u64,
    pub diagnostics: DiagnosticsConfig<f64>,
    pub warnings: Vec<String>,
}

impl ResolvedRun {
    pub fn execute(&self, parallel: bool) -> Result<Vec<RunRecord>> {
        let mut sim = Simulation::new(
            self.algorithm,
            self.problem.as_ref(),
            &self.oracle,
            self.hp,
            self.x0.clone(),
            self.seed,
        )?;
        if !parallel {
            sim = sim.sequential();
        }
        sim.run(self.steps, &self.diagnostics)
    }
}

fn initial_point(config: &RunConfig, problem: &dyn Problem<f64>) -> Result<DenseVector<f64>> {
    match &config.x0 {
        None => Ok(DenseVector::zeros(problem.dim())),
        Some(v) if v.len() == problem.dim() => Ok(DenseVector::from_vec(v.clone())),
        Some(v) => Err(Error::Validation(vec![format!(
            "x0: has {} entries but the problem has dimension {}",
            v.len(),
            problem.dim()
        )])),
    }
}

/// `B` of the full-gradient analysis and `eta = tau / B` at `x0`.
fn gradient_scale(problem: &dyn Problem<f64>, x0: &DenseVector<f64>, tau: f64, extra: f64) -> f64 {
    let gmax = problem
        .local_grads(x0)
        .iter()
        .map(|g| g.norm())
        .fold(0.0, f64::max);
    (3.0 * tau).max(gmax + extra)
}

/// Resolves a validated config against an already-built problem.
pub fn resolve(config: &RunConfig, problem: Arc<dyn Problem<f64>>) -> Result<ResolvedRun> {
    let warnings = config.validate()?;
    let x0 = initial_point(config, problem.as_ref())?;
    let oracle = GradientOracle::new(config.oracle.kind(), config.seed)?;
    oracle.check_compatible(problem.as_ref())?;
    let privacy_delta = config.privacy.as_ref().map_or(default_delta(), |p| p.delta);
    let (hp, eta) = match &config.hyper {
        HyperSpec::Manual {
            gamma,
            tau,
            beta,
            beta_hat,
            sigma_omega,
        } => {
            let hp = HyperParams {
                gamma: *gamma,
                tau: *tau,
                beta: *beta,
                beta_hat: *beta_hat,
                sigma_omega: *sigma_omega,
            };
            let eta = tau / gradient_scale(problem.as_ref(), &x0, *tau, 0.0);
            (hp, eta)
        }
        HyperSpec::Auto {
            tau,
            beta_hat,
            alpha,
            delta,
            sigma_omega,
            noise_sigma,
        } => {
            let eps = config.privacy.as_ref().and_then(|p| p.epsilon);
            let sigma_omega = match eps {
                Some(eps) => dp_sigma(*tau, eps, privacy_delta, config.steps as u64)?,
                None => sigma_omega.unwrap_or(0.0),
            };
            let sigma = config.oracle.sigma().or(*noise_sigma).unwrap_or(0.0);
            auto_params(
                problem.as_ref(),
                &x0,
                AutoInputs {
                    tau: *tau,
                    beta_hat: *beta_hat,
                    alpha: *alpha,
                    delta: *delta,
                    sigma,
                    sigma_omega,
                    steps: config.steps as u64,
                },
            )?
        }
    };
    hp.validate(config.algorithm)?;
    let uses_noise = matches!(config.algorithm, Algorithm::ClipSgd | Algorithm::Clip21Sgd2m);
    let privacy = if hp.sigma_omega > 0.0 && uses_noise {
        Some(PrivacyAccountant::gaussian(hp.tau, hp.sigma_omega, privacy_delta, config.steps as u64)?)
    } else {
        None
    };
    Ok(ResolvedRun {
        problem,
        oracle,
        algorithm: config.algorithm,
        hp,
        x0,
        steps: config.steps,
        seed: config.seed,
        diagnostics: DiagnosticsConfig {
            lyapunov_eta: Some(eta),
            f_reference: None,
            privacy,
        },
        warnings,
    })
}

struct AutoInputs {
    tau: f64,
    beta_hat: f64,
    alpha: f64,
    delta: Option<f64>,
    sigma: f64,
    sigma_omega: f64,
    steps: u64,
}

fn auto_params(problem: &dyn Problem<f64>, x0: &DenseVector<f64>, a: AutoInputs) -> Result<(HyperParams<f64>, f64)> {
    let l = problem.smoothness();
    let grads = problem.local_grads(x0);
    let n = problem.n_workers();
    let mean_sq = grads.iter().map(|g| g.norm_sq()).sum::<f64>() / n as f64;
    let grad_sq = problem.grad(x0).norm_sq();
    let f_gap = match (a.delta, problem.f_lower_bound()) {
        (Some(_), _) => 0.0,
        (None, Some(lb)) => problem.value(x0) - lb,
        (None, None) => {
            return Err(Error::Configuration(
                "hyper.delta is required when the problem has no known optimal value".into(),
            ))
        }
    };
    if a.sigma == 0.0 && a.sigma_omega == 0.0 {
        let big_b = gradient_scale(problem, x0, a.tau, 0.0);
        let source = match a.delta {
            Some(d) => DeltaSource::Fixed(d),
            None => DeltaSource::InitialPoint {
                f_gap,
                mean_local_grad_sq: mean_sq,
                grad_sq,
            },
        };
        let p = deterministic_params(l, big_b, a.tau, a.beta_hat, source)?;
        let hp = HyperParams::new(p.gamma, a.tau).with_momentum(p.beta, a.beta_hat);
        return Ok((hp, p.eta));
    }
    let radii = theory_constants(a.sigma, a.sigma_omega, a.steps, n, problem.dim(), a.alpha)?;
    let big_b = gradient_scale(problem, x0, a.tau, radii.b);
    // any feasible stepsize keeps the Lyapunov weights below these
    let delta = a
        .delta
        .unwrap_or(f_gap + mean_sq / (6.0 * l) + grad_sq / (3.0 * l));
    let p = stochastic_params(&StochasticInputs {
        l,
        delta,
        big_b,
        tau: a.tau,
        radii,
        n,
        steps: a.steps,
        sigma: a.sigma,
        alpha: a.alpha,
        beta_hat_request: a.beta_hat,
    })?;
    let hp = HyperParams::new(p.gamma, a.tau)
        .with_momentum(p.beta, p.beta_hat)
        .with_dp_noise(a.sigma_omega);
    Ok((hp, p.eta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub hyper: HyperParams<f64>,
    /// Mean of `||grad f||` over the last 100 iterations.
    pub final_grad_norm: f64,
    /// Mean of `||grad f||^2` over the last 100 iterations.
    pub final_grad_norm_sq: f64,
    pub eps_spent: Option<f64>,
    pub delta_spent: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
    pub warnings: Vec<String>,
}

fn summarize(run: &ResolvedRun, records: Vec<RunRecord>) -> RunOutput {
    let last = records.last();
    let summary = RunSummary {
        algorithm: run.algorithm,
        steps: run.steps,
        hyper: run.hp,
        final_grad_norm: final_grad_norm(&records).unwrap_or(f64::NAN),
        final_grad_norm_sq: final_grad_norm_sq(&records).unwrap_or(f64::NAN),
        eps_spent: last.and_then(|r| r.eps_spent),
        delta_spent: last.and_then(|r| r.delta_spent),
    };
    RunOutput {
        records,
        summary,
        warnings: run.warnings.clone(),
    }
}

/// Runs a config. `threads` overrides the config's own thread count; the
/// records do not depend on it.
pub fn run_config(config: &RunConfig, threads: Option<usize>) -> Result<RunOutput> {
    config.validate()?;
    let problem = build_problem(&config.problem, &config.base_dir)?;
    let run = resolve(config, problem)?;
    let threads = threads.or(config.threads);
    let records = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?
            .install(|| run.execute(true))?,
        None => run.execute(true)?,
    };
    Ok(summarize(&run, records))
}

pub const CSV_HEADER: &str = "t,grad_norm_sq,f_gap,lyapunov,clip_active,eps_spent,delta_spent";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Writes records as CSV with 17 significant digits.
pub fn write_csv<W: Write>(records: &[RunRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.16e},{},{},{},{},{}",
            r.t,
            r.grad_norm_sq,
            opt(r.f_gap),
            opt(r.lyapunov),
            r.clip_active,
            opt(r.eps_spent),
            opt(r.delta_spent)
        )?;
    }
    w.flush()
}

pub fn emit_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    /// Noise-clipping ratio `sigma_omega / tau`.
    Ratio,
    Workers,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepAxis::Tau),
            "ratio" | "noise_clipping_ratio" => Ok(SweepAxis::Ratio),
            "workers" | "n_workers" => Ok(SweepAxis::Workers),
            _ => Err(Error::invalid(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningGrid {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub beta_hats: Vec<f64>,
    /// Clipping levels tried per cell on the ratio axis; elsewhere the
    /// axis value or the base config's tau is used.
    pub taus: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl TuningGrid {
    /// Stepsizes `2^-5, ..., 2^5`, momentum `{0.1, 0.5, 0.9}`, server momentum
    /// `{0.01, 0.1, 0.5}` on DP sweeps (1 otherwise), three seeds.
    pub fn standard(axis: SweepAxis, base_seed: u64) -> Self {
        let dp = axis == SweepAxis::Ratio;
        Self {
            gammas: (-5..=5).map(|k| 2f64.powi(k)).collect(),
            betas: vec![0.1, 0.5, 0.9],
            beta_hats: if dp { vec![0.01, 0.1, 0.5] } else { vec![1.0] },
            taus: if dp { vec![1e-4, 1e-3, 1e-2, 1e-1] } else { vec![] },
            seeds: (0..3).map(|k| base_seed.wrapping_add(k)).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.gammas.is_empty() || self.betas.is_empty() || self.beta_hats.is_empty() {
            errs.push("tuning grid: every grid must be nonempty".to_string());
        }
        if self.seeds.is_empty() {
            errs.push("tuning grid: needs at least one seed".into());
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            errs.push("tuning grid: seeds must be distinct".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub grid: TuningGrid,
}

impl SweepSpec {
    /// Sweep comparing Clip21-SGD and Clip21-SGD2M on the standard grid.
    pub fn new(base: RunConfig, axis: SweepAxis, values: Vec<f64>) -> Self {
        let grid = TuningGrid::standard(axis, base.seed);
        Self {
            base,
            axis,
            values,
            algorithms: vec![Algorithm::Clip21Sgd, Algorithm::Clip21Sgd2m],
            grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub algorithm: Algorithm,
    pub hyper: HyperParams<f64>,
    /// Mean over seeds of the final averaged gradient norm.
    pub metric: f64,
    pub metric_min: f64,
    pub metric_max: f64,
}

struct Cell {
    hp: HyperParams<f64>,
}

fn cells(algorithm: Algorithm, axis: SweepAxis, value: f64, base_tau: f64, base_omega: f64, grid: &TuningGrid) -> Vec<Cell> {
    let betas: &[f64] = if algorithm.uses_beta() { &grid.betas } else { &[1.0] };
    let beta_hats: &[f64] = if algorithm.uses_beta_hat() { &grid.beta_hats } else { &[1.0] };
    let taus: Vec<f64> = match axis {
        SweepAxis::Tau => vec![value],
        SweepAxis::Ratio if !grid.taus.is_empty() => grid.taus.clone(),
        _ => vec![base_tau],
    };
    let mut out = Vec::new();
    for &gamma in &grid.gammas {
        for &beta in betas {
            for &beta_hat in beta_hats {
                for &tau in &taus {
                    let sigma_omega = match axis {
                        SweepAxis::Ratio => value * tau,
                        _ => base_omega,
                    };
                    out.push(Cell {
                        hp: HyperParams {
                            gamma,
                            tau,
                            beta,
                            beta_hat,
                            sigma_omega,
                        },
                    });
                }
            }
        }
    }
    out
}

/// Grid-tunes every algorithm at every axis value and reports the best cell.
///
/// A cell's score is the mean over seeds of the final averaged gradient norm;
/// a diverged run scores `+inf`. The winner is the first minimum in grid
/// order, which ascends in `gamma`, then `beta`, then `beta_hat`, then `tau`,
/// so ties go to the smaller value. Cells run in parallel; the table does not
/// depend on scheduling.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.base.validate()?;
    spec.grid.validate()?;
    if spec.values.is_empty() {
        return Err(Error::Validation(vec!["sweep: no axis values".into()]));
    }
    let mut grid = spec.grid.clone();
    for v in [&mut grid.gammas, &mut grid.betas, &mut grid.beta_hats, &mut grid.taus] {
        v.sort_by(f64::total_cmp);
    }
    let base_tau = spec.base.hyper.tau();
    let base_omega = match spec.base.hyper {
        HyperSpec::Manual { sigma_omega, .. } => sigma_omega,
        HyperSpec::Auto { sigma_omega, .. } => sigma_omega.unwrap_or(0.0),
    };
    let shared = if spec.axis == SweepAxis::Workers {
        None
    } else {
        Some(build_problem(&spec.base.problem, &spec.base.base_dir)?)
    };
    let mut rows = Vec::new();
    for &value in &spec.values {
        let problem = match &shared {
            Some(p) => Arc::clone(p),
            None => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::invalid(format!("worker count must be a positive integer, got {value}")));
                }
                build_problem(&spec.base.problem.with_workers(value as usize)?, &spec.base.base_dir)?
            }
        };
        for &algorithm in &spec.algorithms {
            let cells = cells(algorithm, spec.axis, value, base_tau, base_omega, &grid);
            let scored: Vec<Result<(f64, f64, f64)>> = cells
                .par_iter()
                .map(|cell| score_cell(&spec.base, &problem, algorithm, cell.hp, &grid.seeds))
                .collect();
            let mut best: Option<(usize, (f64, f64, f64))> = None;
            for (i, s) in scored.into_iter().enumerate() {
                let s = s?;
                if best.as_ref().is_none_or(|(_, b)| s.0 < b.0) {
                    best = Some((i, s));
                }
            }
            let (i, (metric, lo, hi)) = best.expect("grid is nonempty");
            rows.push(SweepRow {
                axis_value: value,
                algorithm,
                hyper: cells[i].hp,
                metric,
                metric_min: lo,
                metric_max: hi,
            });
        }
    }
    Ok(rows)
}

fn score_cell(
    base: &RunConfig,
    problem: &Arc<dyn Problem<f64>>,
    algorithm: Algorithm,
    hp: HyperParams<f64>,
    seeds: &[u64],
) -> Result<(f64, f64, f64)> {
    let mut metrics = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut config = base.clone();
        config.algorithm = algorithm;
        config.seed = seed;
        config.hyper = HyperSpec::Manual {
            gamma: hp.gamma,
            tau: hp.tau,
            beta: hp.beta,
            beta_hat: hp.beta_hat,
            sigma_omega: hp.sigma_omega,
        };
        let run = resolve(&config, Arc::clone(problem))?;
        let m = match run.execute(false) {
            Ok(records) => final_grad_norm(&records).unwrap_or(f64::INFINITY),
            Err(Error::Divergence { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        metrics.push(if m.is_finite() { m } else { f64::INFINITY });
    }
    let mean = metrics.iter().sum::<f64>() / metrics.len() as f64;
    let lo = metrics.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, lo, hi))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "axis_value,algorithm,gamma,tau,beta,beta_hat,sigma_omega,metric,metric_min,metric_max")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.axis_value,
            r.algorithm,
            r.hyper.gamma,
            r.hyper.tau,
            r.hyper.beta,
            r.hyper.beta_hat,
            r.hyper.sigma_omega,
            r.metric,
            r.metric_min,
            r.metric_max
        )?;
    }
    w.flush()
}

/// Clip-GD against Clip21-GD on the two-worker counterexample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChenRow {
    pub x0: f64,
    /// Clip-GD iterate after the run; equal to `x0` when it stalls.
    pub clip_gd_final: f64,
    pub clip21_final: f64,
}

/// Runs Clip-GD and Clip21-GD at `tau = 1`, `gamma = 0.1` from each start.
pub fn chen_counterexample(starts: &[f64], steps: usize) -> Result<Vec<ChenRow>> {
    let problem = chen_example();
    let oracle = GradientOracle::exact();
    let hp = HyperParams::new(0.1, 1.0);
    let cfg = DiagnosticsConfig::default();
    starts
        .iter()
        .map(|&x0| {
            let start = DenseVector::from_vec(vec![x0]);
            let mut a = Simulation::new(Algorithm::ClipSgd, &problem, &oracle, hp, start.clone(), 0)?;
            a.run(steps, &cfg)?;
            let mut b = Simulation::new(Algorithm::Clip21Sgd, &problem, &oracle, hp, start, 0)?;
            b.run(steps, &cfg)?;
            Ok(ChenRow {
                x0,
                clip_gd_final: a.state().x[0],
                clip21_final: b.state().x[0],
            })
        })
        .collect()
}

/// The single-worker three-point counterexample with `L = 2`, `sigma = 5`.
pub fn three_point_setup(n_workers: usize) -> Result<(crate::problems::ScaledQuadratic<f64>, OracleKind<f64>)> {
    Ok((
        scaled_quadratic(2.0, 2, n_workers)?,
        OracleKind::ThreePoint { sigma: 5.0, batch: 1 },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FloorReport {
    pub seeds: usize,
    pub steps: usize,
    pub tau: f64,
    /// Monte-Carlo mean of `||grad f(x^T)||^2`.
    pub mean_grad_norm_sq: f64,
    pub floor: f64,
}

/// Runs the ideal-shift method from `x0 = (0, -1)` with `gamma = 1/(2L)` for
/// many seeds and compares the mean final squared gradient norm with the floor.
pub fn three_point_floor(seeds: usize, steps: usize, tau: f64) -> Result<FloorReport> {
    let (problem, kind) = three_point_setup(1)?;
    let x0 = DenseVector::from_vec(vec![0.0, -1.0]);
    let hp = HyperParams::new(0.25, tau);
    let finals: Vec<Result<f64>> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let oracle = GradientOracle::new(kind, seed)?;
            let mut sim = Simulation::new(Algorithm::Clip21Ideal, &problem, &oracle, hp, x0.clone(), seed)?.sequential();
            for _ in 0..steps {
                sim.step()?;
            }
            Ok(problem.grad(&sim.state().x).norm_sq())
        })
        .collect();
    let finals = finals.into_iter().collect::<Result<Vec<_>>>()?;
    let g0 = problem.grad(&x0).norm_sq();
    Ok(FloorReport {
        seeds,
        steps,
        tau,
        mean_grad_norm_sq: finals.iter().sum::<f64>() / seeds.max(1) as f64,
        floor: nonconvergence_floor(g0, tau),
    })
}

/// Settings of the three-point trajectory comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectorySetup {
    pub steps: usize,
    pub gamma: f64,
    pub beta: f64,
    pub beta_hat: f64,
    pub x0: [f64; 2],
}

impl Default for TrajectorySetup {
    /// `T = 10^4`, `gamma = 1/sqrt(T)`, `beta = T^(-3/4)`, `beta_hat = 1`,
    /// `x0 = (0, -0.07)`.
    fn default() -> Self {
        Self {
            steps: 10_000,
            gamma: 0.01,
            beta: 1e-3,
            beta_hat: 1.0,
            x0: [0.0, -0.07],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub algorithm: Algorithm,
    pub tau: f64,
    pub n_workers: usize,
    /// `max_t median_seeds (f(x^t) - f*)`, relative to `f(x^0) - f*`.
    pub median_peak_ratio: f64,
    /// Median over seeds of the mean of `||grad f||^2` over the last 100 steps.
    pub median_final_grad_norm_sq: f64,
}

/// Clip21-SGD against Clip21-SGD2M on the three-point problem, one row per
/// algorithm and `tau`.
pub fn trajectory_comparison(setup: &TrajectorySetup, taus: &[f64], n_workers: usize, seeds: usize) -> Result<Vec<TrajectoryRow>> {
    let (problem, kind) = three_point_setup(n_workers)?;
    let x0 = DenseVector::from_vec(setup.x0.to_vec());
    let gap0 = problem.value(&x0);
    let mut rows = Vec::new();
    for &tau in taus {
        for algorithm in [Algorithm::Clip21Sgd, Algorithm::Clip21Sgd2m] {
            let hp = HyperParams::new(setup.gamma, tau).with_momentum(setup.beta, setup.beta_hat);
            let per_seed: Vec<Result<(Vec<f64>, f64)>> = (0..seeds as u64)
                .into_par_iter()
                .map(|seed| {
                    let oracle = GradientOracle::new(kind, seed)?;
                    let mut sim = Simulation::new(algorithm, &problem, &oracle, hp, x0.clone(), seed)?.sequential();
                    let records = sim.run(setup.steps, &DiagnosticsConfig::default())?;
                    let gaps = records.iter().map(|r| r.f_gap.unwrap_or(f64::NAN)).collect();
                    Ok((gaps, final_grad_norm_sq(&records).unwrap_or(f64::NAN)))
                })
                .collect();
            let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
            let mut peak = gap0;
            let mut column = Vec::with_capacity(per_seed.len());
            for t in 0..setup.steps {
                column.clear();
                column.extend(per_seed.iter().map(|p| p.0[t]));
                peak = peak.max(median(&column).unwrap_or(f64::NAN));
            }
            let finals: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
            rows.push(TrajectoryRow {
                algorithm,
                tau,
                n_workers,
                median_peak_ratio: peak / gap0,
                median_final_grad_norm_sq: median(&finals).unwrap_or(f64::NAN),
            });
        }
    }
    Ok(rows)
}

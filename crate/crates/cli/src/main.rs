use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::warn;

use clip21::calibration::{account, dp_sigma, gaussian_mechanism_epsilon, per_step_budget, PrivacySpend};
use clip21::harness::{
    chen_counterexample, emit_csv, trajectory_comparison, run_config, sweep, three_point_floor, write_csv, write_sweep_csv, TrajectorySetup,
    RunConfig, SweepAxis, SweepSpec,
};
use clip21::Error;

#[derive(Parser)]
#[command(name = "clip21", version, about = "Clipped distributed optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write per-iteration metrics as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; defaults to the config's `out`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Grid-tune Clip21-SGD and Clip21-SGD2M along one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Reproduce one of the counterexamples.
    Counterexample {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Print the DP noise level for a privacy target and the composed spend.
    Calibrate {
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long = "T")]
        steps: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Tau,
    Ratio,
    Workers,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Chen,
    Theorem1,
    Figure1,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Validation(items) = &e {
                for item in items {
                    eprintln!("  {item}");
                }
            }
            match e {
                Error::Divergence { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn execute(command: Command) -> clip21::Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = run_config(&cfg, threads)?;
            for w in &output.warnings {
                warn!("{w}");
            }
            let target = out.or_else(|| cfg.out.as_ref().map(|p| cfg.resolve_path(p)));
            match target {
                Some(path) => emit_csv(&output.records, &path)?,
                None => write_csv(&output.records, io::stdout().lock()).map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                })?,
            }
            let s = &output.summary;
            eprintln!(
                "{} T={} gamma={:e} tau={:e} beta={:e} beta_hat={:e} sigma_omega={:e}",
                s.algorithm, s.steps, s.hyper.gamma, s.hyper.tau, s.hyper.beta, s.hyper.beta_hat, s.hyper.sigma_omega
            );
            eprintln!("final averaged gradient norm: {:e}", s.final_grad_norm);
            if let (Some(eps), Some(delta)) = (s.eps_spent, s.delta_spent) {
                eprintln!("privacy spent: epsilon={eps:e} delta={delta:e}");
            }
            Ok(())
        }
        Command::Sweep { config, axis, values } => {
            let cfg = RunConfig::from_path(&config)?;
            let axis = match axis {
                AxisArg::Tau => SweepAxis::Tau,
                AxisArg::Ratio => SweepAxis::Ratio,
                AxisArg::Workers => SweepAxis::Workers,
            };
            let rows = sweep(&SweepSpec::new(cfg, axis, values))?;
            write_sweep_csv(&rows, io::stdout().lock()).map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }
        Command::Counterexample { which, seeds } => counterexample(which, seeds),
        Command::Calibrate {
            tau,
            eps,
            delta,
            steps,
        } => {
            let sigma = dp_sigma(tau, eps, delta, steps)?;
            let per_step = per_step_budget(eps, delta, steps)?;
            let spend = account(&PrivacySpend::none(delta), per_step, steps)?;
            let mech = gaussian_mechanism_epsilon(tau, sigma, delta / steps as f64)?;
            let mut out = io::stdout().lock();
            let _ = writeln!(out, "sigma_omega = {sigma:.16e}");
            let _ = writeln!(out, "per-step budget: epsilon = {:.16e}, delta = {:.16e}", per_step.0, per_step.1);
            let _ = writeln!(out, "composed spend: epsilon = {:.16e}, delta = {:.16e}", spend.epsilon, spend.delta);
            let _ = writeln!(out, "gaussian mechanism per-step epsilon at sigma_omega: {mech:.16e}");
            Ok(())
        }
    }
}

fn counterexample(which: Which, seeds: Option<usize>) -> clip21::Result<()> {
    let mut out = io::stdout().lock();
    match which {
        Which::Chen => {
            let rows = chen_counterexample(&[-2.0, -1.0, 0.0, 1.0, 2.0], 1000)?;
            let _ = writeln!(out, "x0,clip_gd_final,clip21_final");
            for r in rows {
                let _ = writeln!(out, "{},{:.16e},{:.16e}", r.x0, r.clip_gd_final, r.clip21_final);
            }
        }
        Which::Theorem1 => {
            let r = three_point_floor(seeds.unwrap_or(10_000), 1000, 0.1)?;
            let _ = writeln!(
                out,
                "seeds={} T={} tau={}: mean ||grad f(x^T)||^2 = {:.6e}, floor = {:.6e}",
                r.seeds, r.steps, r.tau, r.mean_grad_norm_sq, r.floor
            );
        }
        Which::Figure1 => {
            let seeds = seeds.unwrap_or(20);
            let setup = TrajectorySetup::default();
            let _ = writeln!(out, "algorithm,tau,n_workers,median_peak_ratio,median_final_grad_norm_sq");
            let mut rows = trajectory_comparison(&setup, &[1.0, 0.1, 0.01], 1, seeds)?;
            rows.extend(trajectory_comparison(&setup, &[0.1], 100, seeds)?);
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6e},{:.6e}",
                    r.algorithm, r.tau, r.n_workers, r.median_peak_ratio, r.median_final_grad_norm_sq
                );
            }
        }
    }
    Ok(())
}

//! Cross-module properties of the optimizers, problems and diagnostics.

use clip21::algorithms::{Algorithm, HyperParams, Simulation};
use clip21::calibration::{deterministic_params, DeltaSource};
use clip21::diagnostics::{
    lyapunov, nonconvergence_floor, smoothness_gradient_bound_check, smoothness_gradient_bound_check_with_reference,
    DiagnosticsConfig,
};
use clip21::problems::{chen_example, scaled_quadratic, synthetic, NonconvexLogReg, Problem};
use clip21::{DenseVector, GradientOracle, OracleKind, Purpose, RngStream};

fn v(xs: &[f64]) -> DenseVector<f64> {
    DenseVector::from_vec(xs.to_vec())
}

fn random_point(seed: u64, d: usize) -> DenseVector<f64> {
    let mut rng = RngStream::new(seed, 0, Purpose::BatchNoise).at(0);
    DenseVector::from_vec((0..d).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
}

fn logreg() -> NonconvexLogReg<f64> {
    let data = synthetic::two_class::<f64>(30, 8, 21).normalize_rows();
    NonconvexLogReg::new(data.partition(3, 7).unwrap(), 1e-3).unwrap()
}

fn fd_check(p: &dyn Problem<f64>, seeds: std::ops::Range<u64>) {
    let h = 1e-6;
    for seed in seeds {
        let x = random_point(seed, p.dim());
        for i in 0..p.n_workers() {
            let g = p.local_grad(i, &x);
            let fd: Vec<f64> = (0..p.dim())
                .map(|k| {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[k] += h;
                    xm[k] -= h;
                    (p.local_value(i, &xp) - p.local_value(i, &xm)) / (2.0 * h)
                })
                .collect();
            let err = g.sub(&DenseVector::from_vec(fd)).norm();
            assert!(err <= 1e-5 * g.norm().max(1e-3), "{} worker {i}: {err}", p.name());
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    fd_check(&chen_example(), 0..10);
    fd_check(&scaled_quadratic(2.0, 4, 2).unwrap(), 10..20);
    fd_check(&logreg(), 20..30);
}

#[test]
fn logreg_secant_slopes_stay_below_smoothness() {
    let p = logreg();
    let l = p.smoothness();
    for seed in 0..50 {
        let (x, y) = (random_point(2 * seed, p.dim()), random_point(2 * seed + 1, p.dim()));
        for i in 0..p.n_workers() {
            let slope = p.local_grad(i, &x).sub(&p.local_grad(i, &y)).norm() / x.sub(&y).norm();
            assert!(slope <= l, "slope {slope} > L {l}");
        }
    }
}

#[test]
fn logreg_smoothness_bound_holds_against_lower_bound() {
    let p = logreg();
    let lb = p.f_lower_bound().unwrap();
    for seed in 0..100 {
        let x = random_point(seed, p.dim()).scaled(3.0);
        assert!(smoothness_gradient_bound_check_with_reference(&p, &x, lb));
    }
}

/// A quadratic that under-reports its smoothness constant.
struct HalvedL(clip21::problems::ScaledQuadratic<f64>);

impl Problem<f64> for HalvedL {
    fn name(&self) -> &str {
        "halved"
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn n_workers(&self) -> usize {
        self.0.n_workers()
    }
    fn local_value(&self, i: usize, x: &DenseVector<f64>) -> f64 {
        self.0.local_value(i, x)
    }
    fn local_grad(&self, i: usize, x: &DenseVector<f64>) -> DenseVector<f64> {
        self.0.local_grad(i, x)
    }
    fn smoothness(&self) -> f64 {
        0.5 * self.0.smoothness()
    }
    fn f_star(&self) -> Option<f64> {
        self.0.f_star()
    }
}

#[test]
fn halved_smoothness_is_caught() {
    let honest = scaled_quadratic(2.0, 2, 1).unwrap();
    let liar = HalvedL(scaled_quadratic(2.0, 2, 1).unwrap());
    for seed in 0..10 {
        let x = random_point(seed, 2);
        assert!(smoothness_gradient_bound_check(&honest, &x).unwrap());
        assert!(!smoothness_gradient_bound_check(&liar, &x).unwrap());
    }
}

#[test]
fn bookkeeping_identity_with_dp_noise() {
    let p = scaled_quadratic(1.0, 3, 4).unwrap();
    let o = GradientOracle::new(OracleKind::AdditiveGaussian { sigma: 0.3 }, 5).unwrap();
    let hp = HyperParams::new(0.05, 0.2).with_momentum(0.3, 0.6).with_dp_noise(0.1);
    let mut sim = Simulation::new(Algorithm::Clip21Sgd2m, &p, &o, hp, v(&[1.0, -2.0, 0.5]), 11).unwrap();
    for _ in 0..500 {
        sim.step().unwrap();
        let s = sim.state();
        let rhs = s.shift_mean().add(&s.omega_sum.scaled(0.6));
        let err = s.g.sub(&rhs).norm();
        assert!(err <= 1e-10 * s.g.norm().max(1.0), "t={}: {err}", s.t);
    }
}

#[test]
fn clip21_without_momentum_keeps_exact_shift_mean() {
    let p = chen_example();
    let o = GradientOracle::exact();
    let mut sim = Simulation::new(Algorithm::Clip21Sgd, &p, &o, HyperParams::new(0.1, 1.0), v(&[1.5]), 0).unwrap();
    for _ in 0..200 {
        sim.step().unwrap();
        assert_eq!(sim.state().g, sim.state().shift_mean());
    }
}

#[test]
fn clip21_converges_on_chen() {
    let p = chen_example();
    let o = GradientOracle::exact();
    for x0 in [0.0, 2.0, -5.0] {
        let mut sim = Simulation::new(Algorithm::Clip21Sgd, &p, &o, HyperParams::new(0.1, 1.0), v(&[x0]), 0).unwrap();
        let recs = sim.run(10_000, &DiagnosticsConfig::default()).unwrap();
        let hit = recs.iter().position(|r| r.grad_norm_sq.sqrt() < 1e-6);
        assert!(hit.is_some(), "x0 = {x0}");
    }
}

#[test]
fn parallel_and_sequential_runs_agree_bitwise() {
    let p = logreg();
    let o = GradientOracle::new(OracleKind::Minibatch { batch_fraction: 0.5 }, 3).unwrap();
    let hp = HyperParams::new(0.2, 0.05).with_momentum(0.5, 0.5).with_dp_noise(0.01);
    let x0 = DenseVector::zeros(p.dim());
    let mut a = Simulation::new(Algorithm::Clip21Sgd2m, &p, &o, hp, x0.clone(), 1).unwrap();
    let mut b = Simulation::new(Algorithm::Clip21Sgd2m, &p, &o, hp, x0, 1).unwrap().sequential();
    for _ in 0..100 {
        a.step().unwrap();
        b.step().unwrap();
    }
    assert_eq!(a.state().x, b.state().x);
    assert_eq!(a.state().g, b.state().g);
}

#[test]
fn records_are_consecutive() {
    let p = chen_example();
    let o = GradientOracle::exact();
    let mut sim = Simulation::new(Algorithm::Sgdm, &p, &o, HyperParams::new(0.1, 1.0), v(&[1.0]), 0).unwrap();
    let recs = sim.run(37, &DiagnosticsConfig::default()).unwrap();
    assert_eq!(recs.len(), 37);
    assert!(recs.windows(2).all(|w| w[1].t == w[0].t + 1));
    assert!(sim.run(0, &DiagnosticsConfig::default()).is_err());
}

#[test]
fn ideal_variant_mean_iterate_matches_closed_form() {
    let (l, gamma, tau, sigma) = (2.0, 0.1, 0.5, 5.0);
    let p = scaled_quadratic(l, 2, 1).unwrap();
    let x0 = [0.3, -0.2];
    let steps = 30;
    let seeds = 20_000u64;
    let mut mean = [0.0; 2];
    for seed in 0..seeds {
        let o = GradientOracle::new(OracleKind::ThreePoint { sigma, batch: 1 }, seed).unwrap();
        let mut sim = Simulation::new(Algorithm::Clip21Ideal, &p, &o, HyperParams::new(gamma, tau), v(&x0), 0)
            .unwrap()
            .sequential();
        for _ in 0..steps {
            sim.step().unwrap();
        }
        mean[0] += sim.state().x[0] / seeds as f64;
        mean[1] += sim.state().x[1] / seeds as f64;
    }
    let q: f64 = (1.0 - l * gamma).powi(steps);
    let expect = [
        q * x0[0] - tau / (15.0 * l) * 2.0 * (1.0 - q),
        q * x0[1] - tau / (15.0 * l) * (1.0 - q),
    ];
    // each coordinate is a sum of bounded terms; the sd of the mean is ~1e-3 here
    for j in 0..2 {
        assert!((mean[j] - expect[j]).abs() < 3e-3, "coord {j}: {} vs {}", mean[j], expect[j]);
    }
    // the bias keeps the iterate away from the optimum
    assert!(mean[0] < -0.03);
}

#[test]
fn lyapunov_examples() {
    let p = scaled_quadratic(2.0, 2, 3).unwrap();
    let o = GradientOracle::exact();
    let (gamma, beta, bh, eta) = (0.01, 0.08, 0.5, 0.25);
    let hp = HyperParams::new(gamma, 0.1).with_momentum(beta, bh);
    let x0 = v(&[0.0, -1.0]);
    let sim = Simulation::new(Algorithm::Clip21Sgd2m, &p, &o, hp, x0.clone(), 0).unwrap();
    let phi = lyapunov(sim.state(), &p, &hp, eta).unwrap();
    let g2 = p.grad(&x0).norm_sq();
    let expect = p.value(&x0) + (8.0 * gamma * beta / (bh * bh * eta * eta) + 2.0 * gamma / beta) * g2;
    assert!((phi - expect).abs() <= 1e-14 * expect);

    let sim = Simulation::new(Algorithm::Clip21Sgd2m, &p, &o, hp, DenseVector::zeros(2), 0).unwrap();
    assert_eq!(lyapunov(sim.state(), &p, &hp, eta).unwrap(), 0.0);

    let l = logreg();
    let sim = Simulation::new(Algorithm::Clip21Sgd2m, &l, &o, hp, DenseVector::zeros(l.dim()), 0).unwrap();
    assert!(lyapunov(sim.state(), &l, &hp, eta).is_err());
}

#[test]
fn lyapunov_descends_under_calibrated_parameters() {
    let p = chen_example();
    let o = GradientOracle::exact();
    let tau = 0.5;
    let x0 = v(&[1.0]);
    let big_b = p.local_grads(&x0).iter().map(|g| g.norm()).fold(0.0, f64::max);
    let gap = p.value(&x0) - 4.5;
    let dp = deterministic_params(1.0, big_b, tau, 1.0, DeltaSource::InitialPoint {
        f_gap: gap,
        mean_local_grad_sq: p.local_grads(&x0).iter().map(|g| g.norm_sq()).sum::<f64>() / 2.0,
        grad_sq: p.grad(&x0).norm_sq(),
    })
    .unwrap();
    let hp = HyperParams::new(dp.gamma, tau).with_momentum(dp.beta, 1.0);
    let mut sim = Simulation::new(Algorithm::Clip21Sgd2m, &p, &o, hp, x0, 0).unwrap();
    let mut phi = lyapunov(sim.state(), &p, &hp, dp.eta).unwrap();
    for _ in 0..500 {
        let g2 = p.grad(&sim.state().x).norm_sq();
        sim.step().unwrap();
        let next = lyapunov(sim.state(), &p, &hp, dp.eta).unwrap();
        assert!(next <= phi - dp.gamma / 2.0 * g2 + 1e-9, "t={}", sim.state().t);
        phi = next;
    }
}

#[test]
fn floor_examples() {
    assert!((nonconvergence_floor(4.0, 0.1) - 0.5 * 0.01 / 45.0).abs() < 1e-18);
    assert!((nonconvergence_floor(4.0, 0.1) - 1.1111e-4).abs() < 1e-8);
    assert_eq!(nonconvergence_floor(4.0, 1e18), 2.0);
    assert_eq!(nonconvergence_floor(0.0, 0.1), 0.0);
}

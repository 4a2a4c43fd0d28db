use napd::dynamics::{
    default_initial_state, equilibrium_state, rhs, DynamicsParams, PrimalDualSystem, ScalingFunction, SystemState,
};
use napd::integrator::{integrate, make_log_schedule, IntegratorConfig, OdeSystem, Termination};
use napd::problem::{catalog, solve_kkt_oracle, LinearConstraint, ObjectiveFunction, Problem, CATALOG_NAMES};
use nalgebra::DVector;
use proptest::prelude::*;

fn damped_problem() -> Problem {
    Problem::new("damped", ObjectiveFunction::zero(1), LinearConstraint::none(1)).unwrap()
}

fn damped_start() -> SystemState {
    let mut s = SystemState::at_rest(1.0, DVector::from_element(1, 1.0), DVector::zeros(1));
    s.x_dot[0] = 1.0;
    s
}

fn damped_error(rel_tol: f64, abs_tol: f64) -> f64 {
    let cfg = IntegratorConfig {
        rel_tol,
        abs_tol,
        sample_schedule: Some(vec![1.0, 2.0]),
        ..IntegratorConfig::default()
    };
    let params = DynamicsParams::new(3.0, 0.5, 0.0);
    let log = integrate(&damped_problem(), &params, &damped_start(), 2.0, &cfg).unwrap();
    (log.last().unwrap().x[0] - 1.375).abs()
}

#[test]
fn damped_equation_matches_closed_form() {
    let cfg = IntegratorConfig {
        sample_schedule: Some(make_log_schedule(1.0, 2.0, 11).unwrap()),
        ..IntegratorConfig::default()
    };
    let params = DynamicsParams::new(3.0, 0.5, 0.0);
    let log = integrate(&damped_problem(), &params, &damped_start(), 2.0, &cfg).unwrap();
    assert!(log.completed());
    for s in &log.samples {
        let exact = 1.0 + (1.0 - s.t.powi(-2)) / 2.0;
        assert!((s.x[0] - exact).abs() <= 1e-6, "t = {}: {} vs {exact}", s.t, s.x[0]);
        assert!((s.x_dot[0] - s.t.powi(-3)).abs() <= 1e-6);
    }
    assert!((log.last().unwrap().x[0] - 1.375).abs() <= 1e-6);
}

/// Global error scales linearly with the tolerance: each halving divides
/// it by close to two.
#[test]
fn error_is_proportional_to_tolerance() {
    let tols: Vec<f64> = (0..8).map(|k| 1e-8 / f64::powi(2.0, k)).collect();
    let errs: Vec<f64> = tols.iter().map(|&t| damped_error(t, t)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..=2.2).contains(&ratio), "errors {errs:?}");
    }
}

#[test]
fn zero_rhs_keeps_initial_state() {
    let problem = Problem::new("zero", ObjectiveFunction::zero(2), LinearConstraint::none(2)).unwrap();
    let init = SystemState::at_rest(1.0, DVector::from_vec(vec![0.3, -2.0]), DVector::zeros(1));
    let log = integrate(&problem, &DynamicsParams::new(3.0, 0.5, 1.0), &init, 50.0, &IntegratorConfig::default())
        .unwrap();
    for s in &log.samples {
        assert_eq!(s.x, init.x);
        assert_eq!(s.lambda, init.lambda);
        assert_eq!(s.x_dot, init.x_dot);
    }
}

#[test]
fn schedule_is_reproduced_exactly() {
    let problem = catalog("quartic").unwrap();
    let z = solve_kkt_oracle(&problem, 1e-10).unwrap();
    let schedule = vec![1.0, 1.1, 2.0, std::f64::consts::PI, 7.25, 10.0];
    let cfg = IntegratorConfig {
        sample_schedule: Some(schedule.clone()),
        ..IntegratorConfig::default()
    };
    let log = integrate(&problem, &DynamicsParams::new(3.0, 0.5, 1.0), &default_initial_state(&z, 1.0), 10.0, &cfg)
        .unwrap();
    let times: Vec<f64> = log.samples.iter().map(|s| s.t).collect();
    assert_eq!(times, schedule);
}

#[test]
fn identical_inputs_give_identical_logs() {
    let problem = catalog("expsum").unwrap();
    let z = solve_kkt_oracle(&problem, 1e-10).unwrap();
    let params = DynamicsParams::new(5.0, 0.3, 1.0);
    let run = || integrate(&problem, &params, &default_initial_state(&z, 1.0), 100.0, &IntegratorConfig::default()).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn equilibrium_is_preserved() {
    let problem = catalog("quadratic-easy").unwrap();
    let z = solve_kkt_oracle(&problem, 1e-10).unwrap();
    let init = equilibrium_state(&problem, &z, 1.0).unwrap();
    let log = integrate(&problem, &DynamicsParams::new(3.0, 0.5, 1.0), &init, 1000.0, &IntegratorConfig::default())
        .unwrap();
    assert!(log.completed());
    let zs = z.stacked();
    let worst = log.samples.iter().map(|s| (s.z() - &zs).norm()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "drift {worst:e}");
}

#[test]
fn step_limit_returns_partial_log() {
    let problem = catalog("quadratic-easy").unwrap();
    let z = solve_kkt_oracle(&problem, 1e-10).unwrap();
    let cfg = IntegratorConfig {
        max_steps: 200,
        ..IntegratorConfig::default()
    };
    let log = integrate(&problem, &DynamicsParams::new(3.0, 0.5, 1.0), &default_initial_state(&z, 1.0), 1e4, &cfg)
        .unwrap();
    assert!(matches!(log.termination, Termination::StepLimit { .. }));
    assert!(!log.samples.is_empty());
    assert!(log.samples.iter().all(|s| s.is_finite()));
}

#[test]
fn log_schedule_examples() {
    assert_eq!(make_log_schedule(1.0, 100.0, 3).unwrap(), vec![1.0, 10.0, 100.0]);
    assert_eq!(make_log_schedule(2.0, 32.0, 5).unwrap(), vec![2.0, 4.0, 8.0, 16.0, 32.0]);
    assert!(make_log_schedule(1.0, 1.0, 2).is_err());
}

fn flat_rhs(problem: &Problem, params: &DynamicsParams, t: f64, y: &[f64]) -> Vec<f64> {
    let (n, m) = (problem.n(), problem.m());
    let d = rhs(&SystemState::from_flat(t, y, n, m), params, problem).unwrap();
    [d.x_dot, d.lambda_dot, d.x_ddot, d.lambda_ddot]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solver_adapter_agrees_with_rhs(
        idx in 0..CATALOG_NAMES.len(),
        t in 0.5f64..1e3,
        seed in proptest::collection::vec(-2.0f64..2.0, 20),
        r in 0.0f64..1.5,
    ) {
        let problem = catalog(CATALOG_NAMES[idx]).unwrap();
        let params = DynamicsParams::new(4.0, 0.35, 0.7).with_scaling(ScalingFunction::Power { r });
        let dim = 2 * (problem.n() + problem.m());
        let y = &seed[..dim];
        let reference = flat_rhs(&problem, &params, t, y);
        let system = PrimalDualSystem::new(&problem, &params);
        let mut out = vec![0.0; dim];
        system.eval(t, y, &mut out).unwrap();
        for (a, b) in out.iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-13 * (1.0 + t) * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}


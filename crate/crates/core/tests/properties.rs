use napd::diagnostics::energy;
use napd::dynamics::{rhs, DynamicsParams, ScalingFunction, SystemState};
use napd::linalg::null_space;
use napd::problem::{bregman_distance, catalog, solve_kkt_oracle, Problem, CATALOG_NAMES};
use nalgebra::DVector;
use proptest::prelude::*;

fn problems() -> Vec<Problem> {
    CATALOG_NAMES.iter().map(|n| catalog(n).unwrap()).collect()
}

fn vector(len: usize, radius: f64) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-radius..radius, len).prop_map(DVector::from_vec)
}

fn state(t: f64, v: &[f64], n: usize, m: usize) -> SystemState {
    SystemState::from_flat(t, &v[..2 * (n + m)], n, m)
}

#[test]
fn catalog_gradients_match_finite_differences() {
    for p in problems() {
        let f = p.objective();
        assert!(f.gradient_check(64, 2.0, 7) <= 1e-6, "{}", p.name());
        assert!(f.convexity_check(64, 2.0, 11) <= 1e-10, "{}", p.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bregman_distance_is_nonnegative(a in vector(4, 3.0), b in vector(4, 3.0)) {
        for p in problems() {
            let n = p.n();
            let (x, y) = (a.rows(0, n).into_owned(), b.rows(0, n).into_owned());
            let d = bregman_distance(&p, &x, &y).unwrap();
            let scale = 1.0 + p.objective().value(&x).abs() + p.objective().value(&y).abs();
            prop_assert!(d >= -1e-12 * scale, "{}: {d}", p.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn in_place_gradient_agrees(x in vector(4, 3.0)) {
        for p in problems() {
            let x = x.rows(0, p.n()).into_owned();
            let g = p.objective().gradient(&x);
            let mut h = vec![0.0; p.n()];
            p.objective().gradient_into(x.as_slice(), &mut h);
            for (a, b) in g.iter().zip(&h) {
                prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
            }
        }
    }

    /// Hand-expanded right-hand side for quadratic-easy with unit scaling.
    #[test]
    fn rhs_matches_expanded_formula(
        v in proptest::collection::vec(-2.0f64..2.0, 12),
        t in 0.1f64..100.0,
        alpha in 3.0f64..8.0,
        beta in 0.0f64..3.0,
    ) {
        let p = catalog("quadratic-easy").unwrap();
        let theta = 0.5 * (1.0 / (alpha - 1.0) + 0.5);
        let params = DynamicsParams::new(alpha, theta, beta);
        let (x, l, xd, ld) = (&v[0..4], &v[4..6], &v[6..10], &v[10..12]);
        let c = [1.0, -1.0, 0.5, 0.0];
        let r0 = x[0] + x[1] - 1.0;
        let r1 = x[1] + x[2] + x[3] - 2.0;
        let f0 = l[0] + theta * t * ld[0] + beta * r0;
        let f1 = l[1] + theta * t * ld[1] + beta * r1;
        let at_f = [f0, f0 + f1, f1, f1];
        let ax_dot = [xd[0] + xd[1], xd[1] + xd[2] + xd[3]];
        let d = rhs(&state(t, &v, 4, 2), &params, &p).unwrap();
        for i in 0..4 {
            let expected = -alpha / t * xd[i] - (x[i] + c[i] + at_f[i]);
            prop_assert!((d.x_ddot[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs() + t));
        }
        let res = [r0, r1];
        for i in 0..2 {
            let expected = -alpha / t * ld[i] + res[i] + theta * t * ax_dot[i];
            prop_assert!((d.lambda_ddot[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs() + t));
        }
        prop_assert_eq!(d.x_dot.as_slice(), xd);
        prop_assert_eq!(d.lambda_dot.as_slice(), ld);
    }

    #[test]
    fn accelerations_are_affine_in_lambda(
        idx in 0..CATALOG_NAMES.len(),
        v in proptest::collection::vec(-2.0f64..2.0, 12),
        l2 in vector(3, 2.0),
        s in -2.0f64..3.0,
        t in 0.5f64..50.0,
    ) {
        let p = catalog(CATALOG_NAMES[idx]).unwrap();
        let (n, m) = (p.n(), p.m());
        let params = DynamicsParams::new(3.5, 0.4, 1.0);
        let base = state(t, &v, n, m);
        let other = l2.rows(0, m).into_owned();
        let at = |lambda: DVector<f64>| {
            let mut st = base.clone();
            st.lambda = lambda;
            rhs(&st, &params, &p).unwrap()
        };
        let d1 = at(base.lambda.clone());
        let d2 = at(other.clone());
        let ds = at(&base.lambda + (&other - &base.lambda) * s);
        let lin_x = &d1.x_ddot + (&d2.x_ddot - &d1.x_ddot) * s;
        let lin_l = &d1.lambda_ddot + (&d2.lambda_ddot - &d1.lambda_ddot) * s;
        prop_assert!((ds.x_ddot - lin_x).norm() <= 1e-10);
        prop_assert!((ds.lambda_ddot - lin_l).norm() <= 1e-10);
    }

    #[test]
    fn scaling_multiplies_the_forcing(
        idx in 0..CATALOG_NAMES.len(),
        v in proptest::collection::vec(-2.0f64..2.0, 12),
        t in 0.5f64..50.0,
        r in 0.0f64..1.5,
    ) {
        let p = catalog(CATALOG_NAMES[idx]).unwrap();
        let unit = DynamicsParams::new(4.0, 0.3, 0.5);
        let scaled = unit.with_scaling(ScalingFunction::Power { r });
        let st = state(t, &v, p.n(), p.m());
        let (du, ds) = (rhs(&st, &unit, &p).unwrap(), rhs(&st, &scaled, &p).unwrap());
        let damp = 4.0 / t;
        let delta = t.powf(r);
        let fu = &du.x_ddot + &st.x_dot * damp;
        let fs = &ds.x_ddot + &st.x_dot * damp;
        prop_assert!((fs - fu * delta).norm() <= 1e-10 * delta * (1.0 + t));
        let gu = &du.lambda_ddot + &st.lambda_dot * damp;
        let gs = &ds.lambda_ddot + &st.lambda_dot * damp;
        prop_assert!((gs - gu * delta).norm() <= 1e-10 * delta * (1.0 + t));
    }

    /// With A = 0 the primal part is the plain inertial gradient system.
    #[test]
    fn unconstrained_problems_reduce_to_inertial_gradient(
        which in 0usize..2,
        v in proptest::collection::vec(-2.0f64..2.0, 8),
        t in 0.5f64..50.0,
        alpha in 3.0f64..6.0,
    ) {
        let name = ["unconstrained-quad", "unconstrained-quartic"][which];
        let p = catalog(name).unwrap();
        let params = DynamicsParams::new(alpha, 0.3, 2.0);
        let st = state(t, &v, 3, 1);
        let d = rhs(&st, &params, &p).unwrap();
        let expected = -(&st.x_dot * (alpha / t)) - p.objective().gradient(&st.x);
        prop_assert!((d.x_ddot - expected).norm() <= 1e-12);
        prop_assert!((d.lambda_ddot[0] + alpha / t * st.lambda_dot[0]).abs() <= 1e-15);
    }

    /// Shifting λ along ker Aᵀ changes neither acceleration.
    #[test]
    fn dual_null_space_shift_is_invisible(
        v in proptest::collection::vec(-2.0f64..2.0, 12),
        shift in -5.0f64..5.0,
        t in 0.5f64..50.0,
    ) {
        let p = catalog("rank-deficient").unwrap();
        let kernel = null_space(&p.a().transpose());
        prop_assert!(kernel.ncols() >= 1);
        let params = DynamicsParams::new(3.0, 0.5, 1.0);
        let st = state(t, &v, 3, 3);
        let mut shifted = st.clone();
        shifted.lambda += kernel.column(0) * shift;
        let (a, b) = (rhs(&st, &params, &p).unwrap(), rhs(&shifted, &params, &p).unwrap());
        prop_assert!((a.x_ddot - b.x_ddot).norm() <= 1e-12 * (1.0 + shift.abs()));
        prop_assert!((a.lambda_ddot - b.lambda_ddot).norm() <= 1e-12 * (1.0 + shift.abs()));
    }

    #[test]
    fn energy_is_nonnegative_for_admissible_parameters(
        idx in 0..CATALOG_NAMES.len(),
        v in proptest::collection::vec(-2.0f64..2.0, 12),
        t in 1.0f64..1e3,
        alpha in 3.0f64..8.0,
        w in 0.0f64..1.0,
        beta in 0.0f64..2.0,
    ) {
        let p = catalog(CATALOG_NAMES[idx]).unwrap();
        let z = solve_kkt_oracle(&p, 1e-10).unwrap();
        let theta = (1.0 - w) / (alpha - 1.0) + w * 0.5;
        let params = DynamicsParams::new(alpha, theta, beta);
        let e = energy(&state(t, &v, p.n(), p.m()), &params, &z, &p).unwrap();
        prop_assert!(e >= -1e-9 * (1.0 + t * t), "{e}");
    }
}

/// Independent evaluation of the energy for quadratic-easy.
#[test]
fn energy_matches_expanded_formula() {
    let p = catalog("quadratic-easy").unwrap();
    let z = solve_kkt_oracle(&p, 1e-12).unwrap();
    let v = [0.3, -0.2, 1.1, 0.4, -0.5, 0.25, 0.1, 0.0, -0.3, 0.2, 0.05, -0.15];
    let (t, alpha, theta, beta) = (2.5, 4.0, 0.4, 1.5);
    let params = DynamicsParams::new(alpha, theta, beta);
    let st = state(t, &v, 4, 2);

    let c = [1.0, -1.0, 0.5, 0.0];
    let f = |x: &[f64]| (0..4).map(|i| 0.5 * x[i] * x[i] + c[i] * x[i]).sum::<f64>();
    let res = |x: &[f64]| [x[0] + x[1] - 1.0, x[1] + x[2] + x[3] - 2.0];
    let lag = |x: &[f64], l: &[f64]| {
        let r = res(x);
        f(x) + l[0] * r[0] + l[1] * r[1] + 0.5 * beta * (r[0] * r[0] + r[1] * r[1])
    };
    let xs: Vec<f64> = z.x.iter().copied().collect();
    let ls: Vec<f64> = z.lambda.iter().copied().collect();
    let gap = lag(&v[0..4], &ls) - lag(&xs, &v[4..6]);
    let zs: Vec<f64> = xs.iter().chain(&ls).copied().collect();
    let (mut anchored, mut dist) = (0.0, 0.0);
    for i in 0..6 {
        let d = v[i] - zs[i];
        let a = d + theta * t * v[6 + i];
        anchored += a * a;
        dist += d * d;
    }
    let xi = theta * alpha - theta - 1.0;
    let expected = theta * theta * t * t * gap + 0.5 * anchored + 0.5 * xi * dist;
    let got = energy(&st, &params, &z, &p).unwrap();
    assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "{got} vs {expected}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Against `∇f(y)·d + ½dᵀd` for quadratic-easy (Q = I). The error bound
    /// scales with ‖d‖, far below the rounding level of f itself.
    #[test]
    fn objective_difference_resolves_tiny_gaps(y in vector(4, 3.0), dir in vector(4, 1.0), exp in -12.0f64..0.0) {
        let p = catalog("quadratic-easy").unwrap();
        let f = p.objective();
        let x = &y + dir * 10f64.powf(exp);
        let d = &x - &y;
        let expected = f.gradient(&y).dot(&d) + 0.5 * d.norm_squared();
        let got = f.difference(&x, &y);
        let rounding = 1e-14 * (1.0 + y.norm()) * d.norm();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs() + rounding, "{got:e} vs {expected:e}");
    }

    #[test]
    fn bregman_distance_of_quadratic_is_half_squared_distance(y in vector(4, 3.0), dir in vector(4, 1.0), exp in -12.0f64..0.0) {
        let p = catalog("quadratic-easy").unwrap();
        let x = &y + dir * 10f64.powf(exp);
        let d = &x - &y;
        let expected = 0.5 * d.norm_squared();
        let got = bregman_distance(&p, &x, &y).unwrap();
        let rounding = 1e-14 * (1.0 + y.norm()) * d.norm();
        prop_assert!((got - expected).abs() <= 1e-9 * expected + rounding, "{got:e} vs {expected:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// On short segments the quadrature matches the direct difference for
    /// every catalog objective, including the non-polynomial one.
    #[test]
    fn objective_difference_agrees_with_direct(idx in 0..CATALOG_NAMES.len(), y in vector(4, 2.0), d in vector(4, 1.0)) {
        let p = catalog(CATALOG_NAMES[idx]).unwrap();
        let f = p.objective();
        let y = y.rows(0, p.n()).into_owned();
        let x = &y + d.rows(0, p.n());
        let direct = f.value(&x) - f.value(&y);
        let scale = 1.0 + f.value(&x).abs() + f.value(&y).abs();
        prop_assert!((f.difference(&x, &y) - direct).abs() <= 1e-11 * scale, "{}", p.name());
    }
}

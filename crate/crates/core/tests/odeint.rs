use gsnop::odeint::{integrate, ode_solve, ode_solve_at, Method, MlpOde, SolverConfig};

fn exp_error(method: Method, h: f64) -> f64 {
    let cfg = SolverConfig::fixed(method, h);
    (integrate(|_, y| Ok(vec![y[0]]), &[1.0], 0.0, 1.0, &cfg).unwrap()[0] - 1f64.exp()).abs()
}

#[test]
fn fixed_step_convergence_orders() {
    for h in [0.1, 0.05, 0.025] {
        let rk4 = exp_error(Method::Rk4, h) / exp_error(Method::Rk4, h / 2.0);
        assert!((12.0..=20.0).contains(&rk4), "rk4 ratio {rk4} at h={h}");
        let euler = exp_error(Method::Euler, h) / exp_error(Method::Euler, h / 2.0);
        assert!((1.8..=2.2).contains(&euler), "euler ratio {euler} at h={h}");
    }
}

#[test]
fn adaptive_error_tracks_tolerance() {
    // y' = -2ty, y(0) = 1 has y(t) = exp(-t^2).
    let exact = (-4.0f64).exp();
    let mut last = f64::INFINITY;
    for tol in [1e-4, 1e-6, 1e-8, 1e-10] {
        let cfg = SolverConfig {
            rtol: tol,
            atol: tol * 1e-2,
            ..SolverConfig::default()
        };
        let y = integrate(|t, y| Ok(vec![-2.0 * t * y[0]]), &[1.0], 0.0, 2.0, &cfg).unwrap()[0];
        let err = (y - exact).abs();
        assert!(err < 100.0 * tol, "err {err} at tol {tol}");
        assert!(err <= last);
        last = err;
    }
}

#[test]
fn forward_then_reverse_recovers_start() {
    let f = MlpOde::random(4, &[8], 1.0, 3);
    let cfg = SolverConfig {
        rtol: 1e-10,
        atol: 1e-12,
        ..SolverConfig::default()
    };
    let z0 = [0.3, -0.2, 0.5, 0.1];
    let z1 = ode_solve(&f, &z0, 0.0, 1.0, &cfg).unwrap();
    // Reverse time by integrating g(s, y) = -f(1 - s, y) on the same solver.
    let back = integrate(
        |s, y| Ok(gsnop::odeint::eval_func(&f, y, 1.0 - s)?.into_iter().map(|v| -v).collect()),
        &z1,
        0.0,
        1.0,
        &cfg,
    )
    .unwrap();
    for (a, b) in back.iter().zip(z0) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
}

#[test]
fn segmented_solves_agree_with_one_pass() {
    let f = MlpOde::random(3, &[6], 1.0, 9);
    let cfg = SolverConfig {
        rtol: 1e-9,
        atol: 1e-11,
        ..SolverConfig::default()
    };
    let z0 = [0.1, 0.2, -0.4];
    let pieces = ode_solve_at(&f, &z0, 0.0, &[0.25, 0.5, 1.0], &cfg).unwrap();
    let whole = ode_solve(&f, &z0, 0.0, 1.0, &cfg).unwrap();
    for (a, b) in pieces[2].iter().zip(&whole) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!(ode_solve_at(&f, &z0, 0.0, &[0.5, 0.25], &cfg).is_err());
}

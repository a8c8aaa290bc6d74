//! Field-element assembly checked against independent dense-factorization
//! oracles and hand algebra.

mod common;

use dissolve::field::{
    element_exact_dh, element_hat_dh, element_hat_dp, element_hat_ds, h_value, newton_map,
    stationarity_measure,
};
use dissolve::problems::{build_preset, Preset};

fn seeded_points(preset: &Preset<f64>, count: usize, seed: u64, lim: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = preset.problem.dim_x();
    let p = preset.problem.dim_y();
    let mut rng = common::TestRng::new(seed);
    (0..count)
        .map(|_| (rng.vector(n, lim), rng.vector(p, lim)))
        .collect()
}

#[test]
fn newton_map_matches_dense_factorization_on_nqll() {
    let preset = build_preset::<f64>("nqll_smooth", 5, 5, 11).unwrap();
    let prob = preset.problem.as_ref();
    for (x, y) in seeded_points(&preset, 25, 2, 3.0) {
        let step = newton_map(prob, &x, &y, 1e-10).unwrap();
        let dense = common::dense_newton_step(prob, &x, &y);
        let err = common::norm(&common::sub(&step.a_y, &dense));
        assert!(err <= 1e-8, "newton map off by {err:.3e}");
        assert!(step.residual <= 1e-10);
    }
}

#[test]
fn newton_map_fixed_point_bound_on_the_manifold() {
    // At feasible points, ||A(x, y) - y|| <= eps / mu.
    let preset = build_preset::<f64>("nqll_smooth", 4, 4, 5).unwrap();
    let prob = preset.problem.as_ref();
    let mu = prob.constants().mu;
    let mut rng = common::TestRng::new(9);
    for _ in 0..10 {
        let x = rng.vector(4, 3.0);
        let y_star = preset.y_star(&x);
        let eps = 1e-6;
        let step = newton_map(prob, &x, &y_star, eps).unwrap();
        let moved = common::norm(&common::sub(&step.a_y, &y_star));
        assert!(moved <= eps / mu + 1e-11, "moved {moved:.3e}");
    }
}

#[test]
fn quadratic_lower_level_newton_step_is_exact() {
    // q_g = 0: A(x, y) = y*(x) up to the inner tolerance.
    let preset = build_preset::<f64>("qll_smooth", 4, 5, 3).unwrap();
    let prob = preset.problem.as_ref();
    for (x, y) in seeded_points(&preset, 25, 4, 3.0) {
        let step = newton_map(prob, &x, &y, 1e-10).unwrap();
        let y_star = preset.y_star(&x);
        let err = common::norm(&common::sub(&step.a_y, &y_star));
        assert!(err <= 1e-9, "A(x,y) should land on y*(x): err {err:.3e}");
    }
}

#[test]
fn h_matches_an_independent_recomposition_on_nqll() {
    let preset = build_preset::<f64>("nqll_l1", 5, 5, 23).unwrap();
    let prob = preset.problem.as_ref();
    let beta = 2.5;
    for (x, y) in seeded_points(&preset, 25, 6, 3.0) {
        let h = h_value(prob, &x, &y, beta, 1e-12).unwrap();
        // Independent route: dense Newton step, then recompose.
        let a_y = common::dense_newton_step(prob, &x, &y);
        let grad = prob.grad_y_g(&x, &y);
        let expected = prob.f_value(&x, &a_y) + 0.5 * beta * common::dot(&grad, &grad);
        assert!((h - expected).abs() <= 1e-10, "h off by {:.3e}", (h - expected).abs());
    }
}

#[test]
fn exact_element_reduces_to_the_hypergradient_on_the_manifold() {
    // Both correction terms carry a grad_y_g factor, so at feasible points
    // the element is (d_x - hess_xy(hess_yy^{-1} d_y), 0).
    let preset = build_preset::<f64>("nqll_smooth", 4, 4, 17).unwrap();
    let prob = preset.problem.as_ref();
    let beta = 4.0;
    let mut rng = common::TestRng::new(12);
    for _ in 0..10 {
        let x = rng.vector(4, 2.0);
        let y_star = preset.y_star(&x);
        let element = element_exact_dh(prob, &x, &y_star, beta).unwrap();
        let dense_hyper = common::dense_hypergradient(prob, &x, &y_star);
        let err_x = common::norm(&common::sub(&element.dir_x, &dense_hyper));
        assert!(err_x <= 1e-9, "x-component off by {err_x:.3e}");
        assert!(common::norm(&element.dir_y) <= 1e-9);
    }
}

#[test]
fn exact_and_basic_elements_agree_when_third_derivatives_vanish() {
    // q_g = 0: the x-components coincide and the y-components differ only
    // through hess_yy vs identity acting on grad_y_g.
    let preset = build_preset::<f64>("qll_smooth", 4, 4, 29).unwrap();
    let prob = preset.problem.as_ref();
    let beta = 1.5;
    for (x, y) in seeded_points(&preset, 20, 14, 3.0) {
        let exact = element_exact_dh(prob, &x, &y, beta).unwrap();
        let hat = element_hat_dh(prob, &x, &y, beta, 1e-12, 1e-12).unwrap();
        let err_x = common::norm(&common::sub(&exact.dir_x, &hat.dir_x));
        assert!(err_x <= 1e-9, "x-components differ by {err_x:.3e}");
        let grad = prob.grad_y_g(&x, &y);
        let h_grad = prob.hess_yy(&x, &y).apply(&grad);
        let expected_y: Vec<f64> = h_grad.iter().map(|v| beta * v).collect();
        let err_y = common::norm(&common::sub(&exact.dir_y, &expected_y));
        assert!(err_y <= 1e-9, "exact y-component should be beta * hess_yy grad");
    }
}

#[test]
fn exact_element_matches_finite_differences_of_h_on_nqll() {
    let preset = build_preset::<f64>("nqll_smooth", 4, 4, 37).unwrap();
    let prob = preset.problem.as_ref();
    let beta = 3.0;
    for (x, y) in seeded_points(&preset, 15, 21, 2.0) {
        let element = element_exact_dh(prob, &x, &y, beta).unwrap();
        let t = 1e-6 * (1.0 + common::norm(&x).hypot(common::norm(&y)));
        let mut fd = Vec::with_capacity(8);
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += t;
            let mut xm = x.clone();
            xm[i] -= t;
            fd.push(
                (h_value(prob, &xp, &y, beta, 1e-12).unwrap()
                    - h_value(prob, &xm, &y, beta, 1e-12).unwrap())
                    / (2.0 * t),
            );
        }
        for j in 0..4 {
            let mut yp = y.clone();
            yp[j] += t;
            let mut ym = y.clone();
            ym[j] -= t;
            fd.push(
                (h_value(prob, &x, &yp, beta, 1e-12).unwrap()
                    - h_value(prob, &x, &ym, beta, 1e-12).unwrap())
                    / (2.0 * t),
            );
        }
        let mut dir = element.dir_x.clone();
        dir.extend_from_slice(&element.dir_y);
        let rel = common::norm(&common::sub(&dir, &fd)) / common::norm(&fd).max(1.0);
        assert!(rel <= 1e-5, "relative error {rel:.3e}");
    }
}

#[test]
fn basic_descent_inequality_on_qll_points() {
    // With q_g = 0 the threshold is vacuous and the modulus strengthens to
    // min(1, mu): <exact, dir> >= min(1, mu) ||dir||^2 - 1e-9.
    let preset = build_preset::<f64>("qll_smooth", 4, 4, 41).unwrap();
    let prob = preset.problem.as_ref();
    let c = prob.constants();
    let beta = 1.0;
    let delta = 1.0f64.min(c.mu);
    for (x, y) in seeded_points(&preset, 50, 33, 3.0) {
        let exact = element_exact_dh(prob, &x, &y, beta).unwrap();
        let hat = element_hat_dh(prob, &x, &y, beta, 1e-12, 1e-12).unwrap();
        let lhs = common::dot(&exact.dir_x, &hat.dir_x) + common::dot(&exact.dir_y, &hat.dir_y);
        let dn = hat.dir_norm();
        assert!(
            lhs >= delta * dn * dn - 1e-9,
            "descent violated: {lhs:.6e} < {:.6e}",
            delta * dn * dn
        );
    }
}

#[test]
fn two_scale_element_x_component_is_the_classical_hypergradient() {
    let preset = build_preset::<f64>("nqll_smooth", 5, 5, 43).unwrap();
    let prob = preset.problem.as_ref();
    for (x, y) in seeded_points(&preset, 20, 51, 3.0) {
        let ds = element_hat_ds(prob, &x, &y, 6.0, 1e-12, 1e-12).unwrap();
        let dense = common::dense_hypergradient(prob, &x, &y);
        let err = common::norm(&common::sub(&ds.dir_x, &dense));
        assert!(err <= 1e-8, "hypergradient off by {err:.3e}");
    }
}

#[test]
fn projected_element_matches_dense_w_assembly_on_qll() {
    let preset = build_preset::<f64>("qll_smooth", 3, 3, 47).unwrap();
    let prob = preset.problem.as_ref();
    let beta = 2.0;
    for (x, y) in seeded_points(&preset, 20, 61, 3.0) {
        let e = element_hat_dp(prob, &x, &y, beta, 1e-12).unwrap();

        // Dense route: materialize B and H, assemble W = [I, -B H^{-1}],
        // then W'W (d_x, d_y) + (0, beta grad).
        let (p, _, h) = common::materialize(prob.hess_yy(&x, &y).as_ref());
        let (_, _, b) = common::materialize(prob.hess_xy(&x, &y).as_ref());
        let a_y = common::dense_newton_step(prob, &x, &y);
        let (d_x, d_y) = prob.df_element(&x, &a_y);
        let hinv_dy = common::dense_solve(p, &h, &d_y);
        let px: Vec<f64> = common::sub(&d_x, &common::matvec(3, 3, &b, &hinv_dy));
        // y-block of W'W d: -H^{-1} B' p_x.
        let mut bt_px = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                bt_px[j] += b[i * 3 + j] * px[i];
            }
        }
        let y_block = common::dense_solve(p, &h, &bt_px);
        let grad = prob.grad_y_g(&x, &y);
        let expected_y: Vec<f64> = grad
            .iter()
            .zip(&y_block)
            .map(|(&g, &s)| beta * g - s)
            .collect();

        let err_x = common::norm(&common::sub(&e.dir_x, &px));
        let err_y = common::norm(&common::sub(&e.dir_y, &expected_y));
        assert!(err_x <= 1e-10, "p_x off by {err_x:.3e}");
        assert!(err_y <= 1e-10, "y-correction off by {err_y:.3e}");
    }
}

#[test]
fn element_norms_respect_the_problem_bound() {
    for name in ["qll_l1", "nqll_l1", "scalar_nonsmooth"] {
        let (n, p) = if name == "scalar_nonsmooth" { (1, 1) } else { (4, 4) };
        let preset = build_preset::<f64>(name, n, p, 53).unwrap();
        let prob = preset.problem.as_ref();
        let m_f = prob.constants().m_f;
        for (x, y) in seeded_points(&preset, 30, 71, 3.0) {
            let e = element_hat_dh(prob, &x, &y, 1.0, 1e-10, 1e-10).unwrap();
            let d_norm = common::dot(&e.d_x, &e.d_x) + common::dot(&e.d_y, &e.d_y);
            assert!(d_norm.sqrt() <= m_f + 1e-12);
        }
    }
}

#[test]
fn inner_residuals_meet_their_requested_tolerances() {
    let preset = build_preset::<f64>("nqll_smooth", 5, 5, 59).unwrap();
    let prob = preset.problem.as_ref();
    for (x, y) in seeded_points(&preset, 10, 81, 3.0) {
        for e in [
            element_hat_dh(prob, &x, &y, 1.0, 1e-6, 1e-8).unwrap(),
            element_hat_ds(prob, &x, &y, 5.0, 1e-6, 1e-8).unwrap(),
            element_hat_dp(prob, &x, &y, 1.0, 1e-6).unwrap(),
        ] {
            for solve in &e.inner {
                assert!(
                    solve.residual <= solve.requested,
                    "{}: {:.3e} > {:.3e}",
                    solve.label,
                    solve.residual,
                    solve.requested
                );
            }
        }
    }
}

#[test]
fn stationarity_cross_checks_the_basic_element_norm() {
    // Wherever feas and stat_x are tiny, the basic element norm is tiny,
    // and vice versa (the equivalence the stopping rule relies on).
    let preset = build_preset::<f64>("qll_smooth", 4, 4, 61).unwrap();
    let prob = preset.problem.as_ref();
    let (x_star, y_star) = preset.minimizer.clone().unwrap();
    let m = stationarity_measure(prob, &x_star, &y_star, 1e-12).unwrap();
    assert!(m.feas <= 1e-10 && m.stat_x <= 1e-8);
    let e = element_hat_dh(prob, &x_star, &y_star, 1.0, 1e-12, 1e-12).unwrap();
    assert!(e.dir_norm() <= 1e-7, "element norm {:.3e}", e.dir_norm());

    // An infeasible point keeps a positive feasibility residual.
    let y_off: Vec<f64> = y_star.iter().map(|v| v + 0.5).collect();
    let m = stationarity_measure(prob, &x_star, &y_off, 1e-12).unwrap();
    assert!(m.feas > 0.05);
    let e = element_hat_dh(prob, &x_star, &y_off, 1.0, 1e-12, 1e-12).unwrap();
    assert!(e.dir_norm() > 0.05);
}

#[test]
fn feasibility_contraction_holds_far_from_the_manifold() {
    // The contraction inequality is global; push far-field points through.
    let preset = build_preset::<f64>("nqll_smooth", 4, 4, 67).unwrap();
    let prob = preset.problem.as_ref();
    let c = prob.constants();
    let factor = c.q_g / (2.0 * c.mu.powi(3));
    let mut rng = common::TestRng::new(91);
    for _ in 0..25 {
        let x = rng.vector(4, 10.0);
        let y = rng.vector(4, 10.0);
        let step = newton_map(prob, &x, &y, 1e-12).unwrap();
        let y_star = preset.y_star(&x);
        let lhs = common::norm(&common::sub(&step.a_y, &y_star));
        let feas = common::norm(&prob.grad_y_g(&x, &y));
        assert!(lhs <= factor * feas * feas + 1e-10, "contraction violated");
    }
}

#[test]
fn basic_element_with_vanishing_dual_is_the_raw_element_on_the_manifold() {
    // An upper level independent of y gives d_y = 0; at feasible points
    // both corrections vanish exactly and dir = (d_x, 0).
    struct XOnlyUpper(Box<dyn dissolve::problem::BilevelProblem<f64> + Send + Sync>);
    impl dissolve::problem::BilevelProblem<f64> for XOnlyUpper {
        fn dim_x(&self) -> usize {
            self.0.dim_x()
        }
        fn dim_y(&self) -> usize {
            self.0.dim_y()
        }
        fn constants(&self) -> dissolve::problem::ProblemConstants<f64> {
            self.0.constants()
        }
        fn f_value(&self, x: &[f64], _y: &[f64]) -> f64 {
            x.iter().sum()
        }
        fn df_element(&self, x: &[f64], _y: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![1.0; x.len()], vec![0.0; self.0.dim_y()])
        }
        fn g_value(&self, x: &[f64], y: &[f64]) -> f64 {
            self.0.g_value(x, y)
        }
        fn grad_y_g(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
            self.0.grad_y_g(x, y)
        }
        fn hess_yy<'a>(&'a self, x: &[f64], y: &[f64]) -> Box<dyn dissolve::problem::LinearOp<f64> + 'a> {
            self.0.hess_yy(x, y)
        }
        fn hess_xy<'a>(&'a self, x: &[f64], y: &[f64]) -> Box<dyn dissolve::problem::LinearOp<f64> + 'a> {
            self.0.hess_xy(x, y)
        }
        fn hess_yx<'a>(&'a self, x: &[f64], y: &[f64]) -> Box<dyn dissolve::problem::LinearOp<f64> + 'a> {
            self.0.hess_yx(x, y)
        }
    }
    let preset = build_preset::<f64>("scalar_nonsmooth", 1, 1, 0).unwrap();
    let wrapped = XOnlyUpper(preset.problem);
    // y = x is exactly feasible for the scalar lower level.
    let e = element_hat_dh(&wrapped, &[1.5], &[1.5], 2.0, 0.0, 0.0).unwrap();
    assert_eq!(e.d_y, vec![0.0]);
    assert_eq!(e.dir_x, vec![1.0]);
    assert_eq!(e.dir_y, vec![0.0]);
}

#[test]
fn projected_element_vanishes_at_a_smooth_stationary_feasible_point() {
    let preset = build_preset::<f64>("qll_smooth", 4, 4, 11).unwrap();
    let (x_star, y_star) = preset.minimizer.clone().unwrap();
    let e = element_hat_dp(preset.problem.as_ref(), &x_star, &y_star, 1.0, 1e-12).unwrap();
    assert!(e.dir_norm() <= 1e-9, "projected element should vanish: {:.3e}", e.dir_norm());
}

#[test]
fn iterate_cache_matches_a_fresh_oracle_call_exactly() {
    let preset = build_preset::<f64>("nqll_smooth", 3, 3, 29).unwrap();
    let prob = preset.problem.as_ref();
    let it = dissolve::field::Iterate::new(prob, vec![0.3, -0.7, 1.2], vec![0.9, 0.1, -2.0]);
    let fresh = prob.grad_y_g(&it.x, &it.y);
    assert_eq!(it.grad_y_g, fresh);
    assert_eq!(it.feas, common::norm(&fresh));
}

#[test]
fn generic_scalar_instantiation_runs_in_f32() {
    let preset = dissolve::problems::build_scalar_nonsmooth::<f32>();
    let e = element_hat_dh(preset.problem.as_ref(), &[0.0f32], &[0.0f32], 2.0, 1e-4, 1e-4).unwrap();
    assert_eq!(e.dir_x, vec![-1.0f32]);
    let m = dissolve::field::stationarity_measure(preset.problem.as_ref(), &[2.0f32], &[0.0], 1e-4).unwrap();
    assert!(m.feas > 1.0);
}

//! The diagnostics battery end to end, plus sensitivity of the checkers to
//! violated hypotheses and hand-placed points.

mod common;

use dissolve::diagnostics::{
    check_boundedness, check_descent, check_equivalence_at_solution, check_gradient_fd,
    run_battery, sample_points, DiagnosticsError, EquivalenceTols,
};
use dissolve::field::FieldVariant;
use dissolve::problems::build_preset;

#[test]
fn battery_passes_on_every_plain_preset() {
    for name in ["qll_smooth", "qll_l1", "nqll_smooth", "nqll_l1", "scalar_nonsmooth"] {
        let (n, p) = if name == "scalar_nonsmooth" { (1, 1) } else { (4, 4) };
        let preset = build_preset::<f64>(name, n, p, 7).unwrap();
        let reports = run_battery(&preset, 30, 42).unwrap();
        for report in &reports {
            assert!(
                report.passed,
                "{name}/{}: worst margin {:+.3e} ({})",
                report.name, report.worst_margin, report.detail
            );
        }
        // Reports serialize to the JSON verdict schema.
        let json = serde_json::to_value(&reports).unwrap();
        assert!(json.as_array().unwrap().len() >= 5);
    }
}

#[test]
fn descent_check_refuses_sub_threshold_penalties() {
    let preset = build_preset::<f64>("nqll_smooth", 4, 4, 7).unwrap();
    let prob = preset.problem.as_ref();
    let points = sample_points(prob, 5, 3, 1.0);
    let err = check_descent(prob, FieldVariant::HatDp, 0.5, 0.0, &points).unwrap_err();
    match err {
        DiagnosticsError::HypothesisViolated { check, detail } => {
            assert_eq!(check, "descent_hat_dp");
            assert!(detail.contains("β ≥ max(8·M_f·Q_g/μ³, 4·M_f·Q_g·L_g/μ^3.5)"), "{detail}");
        }
        other => panic!("expected hypothesis violation, got {other}"),
    }
}

#[test]
fn boundedness_check_refuses_sub_threshold_penalties() {
    let preset = build_preset::<f64>("nqll_smooth", 4, 4, 7).unwrap();
    let prob = preset.problem.as_ref();
    let points = sample_points(prob, 5, 3, 1.0);
    let err = check_boundedness(prob, 0.01, 0.0, &points).unwrap_err();
    assert!(err.to_string().contains("β ≥ M_f·Q_g/μ³"), "{err}");
}

#[test]
fn gradient_check_requires_third_order_oracles() {
    struct NoThirds(Box<dyn dissolve::problem::BilevelProblem<f64> + Send + Sync>);
    impl dissolve::problem::BilevelProblem<f64> for NoThirds {
        fn dim_x(&self) -> usize {
            self.0.dim_x()
        }
        fn dim_y(&self) -> usize {
            self.0.dim_y()
        }
        fn constants(&self) -> dissolve::problem::ProblemConstants<f64> {
            self.0.constants()
        }
        fn f_value(&self, x: &[f64], y: &[f64]) -> f64 {
            self.0.f_value(x, y)
        }
        fn df_element(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
            self.0.df_element(x, y)
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
    let preset = build_preset::<f64>("qll_smooth", 3, 3, 7).unwrap();
    let wrapped = NoThirds(preset.problem);
    let points = sample_points(&wrapped, 3, 3, 1.0);
    assert!(matches!(
        check_gradient_fd(&wrapped, 1.0, &points),
        Err(DiagnosticsError::NotApplicable { .. })
    ));
}

#[test]
fn linear_upper_level_gradient_matches_the_assembled_direction() {
    // A constant-gradient upper level makes the exact element a pure
    // Hessian-chain expression; finite differences must agree tightly.
    struct LinearUpper(Box<dyn dissolve::problem::BilevelProblem<f64> + Send + Sync>);
    impl dissolve::problem::BilevelProblem<f64> for LinearUpper {
        fn dim_x(&self) -> usize {
            self.0.dim_x()
        }
        fn dim_y(&self) -> usize {
            self.0.dim_y()
        }
        fn constants(&self) -> dissolve::problem::ProblemConstants<f64> {
            let mut c = self.0.constants();
            c.m_f = (self.dim_x() as f64 + self.dim_y() as f64).sqrt() * 0.5;
            c
        }
        fn f_value(&self, x: &[f64], y: &[f64]) -> f64 {
            0.5 * (x.iter().sum::<f64>() - y.iter().sum::<f64>())
        }
        fn df_element(&self, x: &[f64], _y: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![0.5; x.len()], vec![-0.5; self.0.dim_y()])
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
        fn third_xyy<'a>(&'a self, x: &[f64], y: &[f64], d: &[f64]) -> Option<Box<dyn dissolve::problem::LinearOp<f64> + 'a>> {
            self.0.third_xyy(x, y, d)
        }
        fn third_yyy<'a>(&'a self, x: &[f64], y: &[f64], d: &[f64]) -> Option<Box<dyn dissolve::problem::LinearOp<f64> + 'a>> {
            self.0.third_yyy(x, y, d)
        }
        fn has_third_order(&self) -> bool {
            self.0.has_third_order()
        }
    }
    let preset = build_preset::<f64>("qll_smooth", 3, 3, 13).unwrap();
    let wrapped = LinearUpper(preset.problem);
    let points = sample_points(&wrapped, 20, 5, 1.0);
    let check = check_gradient_fd(&wrapped, 1.0, &points).unwrap();
    let max_err = check.constant - check.worst_margin;
    assert!(check.passed);
    assert!(max_err <= 1e-8, "linear upper level should agree to 1e-8, got {max_err:.3e}");
}

#[test]
fn equivalence_check_passes_at_a_hand_placed_stationary_point() {
    let preset = build_preset::<f64>("qll_smooth", 4, 4, 23).unwrap();
    let (x_star, y_star) = preset.minimizer.clone().unwrap();
    let check = check_equivalence_at_solution(
        preset.problem.as_ref(),
        FieldVariant::HatDh,
        1.0,
        0.0,
        &x_star,
        &y_star,
        EquivalenceTols::uniform(1e-8),
    )
    .unwrap();
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn equivalence_check_names_the_feasibility_violation() {
    let preset = build_preset::<f64>("qll_smooth", 4, 4, 23).unwrap();
    let (x_star, y_star) = preset.minimizer.clone().unwrap();
    // Infeasible point whose hypergradient residual is still tiny: the
    // element probes A(x, y) = y*(x) regardless of the y offset.
    let y_off: Vec<f64> = y_star.iter().map(|v| v + 0.5).collect();
    let check = check_equivalence_at_solution(
        preset.problem.as_ref(),
        FieldVariant::HatDh,
        1.0,
        0.0,
        &x_star,
        &y_off,
        EquivalenceTols::uniform(1e-4),
    )
    .unwrap();
    assert!(!check.passed);
    assert!(check.detail.contains("feas"), "{}", check.detail);
    assert!(!check.detail.contains("stat_x"), "stat must not be blamed: {}", check.detail);
}

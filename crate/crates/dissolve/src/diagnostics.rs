//! Numerical verification of the inequalities the solvers rely on.
//!
//! Each check samples seeded points from a componentwise-uniform cell
//! `[-3r, 3r]` (r = per-problem radius), evaluates both sides of one
//! inequality, and reports the worst margin. "Exact" quantities inside
//! checks run at inner tolerance `1e-12` (or to stagnation), so the check
//! slacks — `1e-8`..`1e-10` — dominate solver error by at least two orders.
//!
//! The checkers themselves are exercised with negative controls: corrupted
//! oracles and sub-threshold penalties must flip the corresponding check to
//! fail.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::field::{
    element_exact_dh, element_hat_dh, element_hat_dp, element_hat_ds, h_value,
    lower_level_minimizer, newton_map, stationarity_measure, FieldError, FieldVariant,
};
use crate::linalg::{axpy, dot, norm, norm_pair, scaled, sub};
use crate::problem::BilevelProblem;
use crate::problems::Preset;
use crate::scalar::{cast, to_f64, Scalar};
use crate::solver::Thresholds;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("check `{check}` requires {requirement}")]
    NotApplicable {
        check: &'static str,
        requirement: &'static str,
    },
    #[error("check `{check}` hypothesis violated: {detail}")]
    HypothesisViolated { check: &'static str, detail: String },
}

/// Verdict of one check: the points tested, the constant the inequality was
/// instantiated with, and the worst margin (`>= 0` iff every point passed).
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport<T> {
    pub name: &'static str,
    pub passed: bool,
    pub points: usize,
    /// Minimum over points of (allowed bound - observed value).
    pub worst_margin: T,
    /// The constant the bound was built from (descent modulus, contraction
    /// factor, ...).
    pub constant: T,
    pub detail: String,
}

/// Seeded sample of `(x, y)` points, componentwise uniform on
/// `[-3 radius, 3 radius]`.
pub fn sample_points<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    count: usize,
    seed: u64,
    radius: T,
) -> Vec<(Vec<T>, Vec<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = 3.0 * to_f64(radius);
    let n = prob.dim_x();
    let p = prob.dim_y();
    (0..count)
        .map(|_| {
            let x = (0..n).map(|_| cast(rng.gen_range(-lim..lim))).collect();
            let y = (0..p).map(|_| cast(rng.gen_range(-lim..lim))).collect();
            (x, y)
        })
        .collect()
}

fn random_unit<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T> {
    loop {
        let v: Vec<T> = (0..dim).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect();
        let n = norm(&v);
        if n > cast(1e-3) {
            return scaled(&v, T::one() / n);
        }
    }
}

/// Compares the exact field element against central finite differences of
/// the penalty objective at each point; passes iff the worst relative error
/// is at most `1e-4`. Needs a smooth upper level and third-order oracles.
pub fn check_gradient_fd<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    beta: T,
    points: &[(Vec<T>, Vec<T>)],
) -> Result<CheckReport<T>, DiagnosticsError> {
    if !prob.has_third_order() {
        return Err(DiagnosticsError::NotApplicable {
            check: "gradient_fd",
            requirement: "third-order oracles",
        });
    }
    let bound = cast::<T>(1e-4);
    let eps = cast::<T>(1e-12);
    let mut worst = T::zero();
    for (x, y) in points {
        let element = element_exact_dh(prob, x, y, beta)?;
        let t = cast::<T>(1e-6) * (T::one() + norm_pair(x, y));
        let n = x.len();
        let p = y.len();
        let mut fd = vec![T::zero(); n + p];
        for i in 0..n {
            let mut xp = x.clone();
            xp[i] = xp[i] + t;
            let mut xm = x.clone();
            xm[i] = xm[i] - t;
            fd[i] = (h_value(prob, &xp, y, beta, eps)? - h_value(prob, &xm, y, beta, eps)?)
                / (cast::<T>(2.0) * t);
        }
        for j in 0..p {
            let mut yp = y.clone();
            yp[j] = yp[j] + t;
            let mut ym = y.clone();
            ym[j] = ym[j] - t;
            fd[n + j] = (h_value(prob, x, &yp, beta, eps)? - h_value(prob, x, &ym, beta, eps)?)
                / (cast::<T>(2.0) * t);
        }
        let mut dir = element.dir_x.clone();
        dir.extend_from_slice(&element.dir_y);
        let err = norm(&sub(&dir, &fd)) / norm(&fd).max(T::one());
        worst = worst.max(err);
    }
    Ok(CheckReport {
        name: "gradient_fd",
        passed: worst <= bound,
        points: points.len(),
        worst_margin: bound - worst,
        constant: bound,
        detail: format!(
            "max relative error between the exact element and central differences of h: {:.3e}",
            to_f64(worst)
        ),
    })
}

/// Verifies the feasibility contraction of the Newton map:
/// `||A(x,y) - y*(x)|| <= q_g/(2 mu^3) ||grad_y_g||^2 + 1e-10`, with
/// `y*(x)` from damped Newton at residual `1e-12`.
pub fn check_contraction<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    points: &[(Vec<T>, Vec<T>)],
) -> Result<CheckReport<T>, DiagnosticsError> {
    let c = prob.constants();
    let factor = c.q_g / (cast::<T>(2.0) * c.mu.powi(3));
    let slack = cast::<T>(1e-10);
    let mut worst_margin = T::infinity();
    for (x, y) in points {
        let step = newton_map(prob, x, y, cast(1e-12))?;
        let y_star = lower_level_minimizer(prob, x, y, cast(1e-12), 100)?.y;
        let lhs = norm(&sub(&step.a_y, &y_star));
        let feas = norm(&prob.grad_y_g(x, y));
        let rhs = factor * feas * feas + slack;
        worst_margin = worst_margin.min(rhs - lhs);
    }
    Ok(CheckReport {
        name: "contraction",
        passed: worst_margin >= T::zero(),
        points: points.len(),
        worst_margin,
        constant: factor,
        detail: "||A(x,y) - y*(x)|| <= q_g/(2 mu^3) ||grad_y_g||^2 + 1e-10".into(),
    })
}

/// Verifies one descent inequality,
/// `<exact element, dir> >= delta ||dir||^2 - 1e-9`, with the variant's
/// modulus `delta`. The penalty weights must sit at or above their
/// thresholds for the inequality to be guaranteed.
pub fn check_descent<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    variant: FieldVariant,
    beta: T,
    beta_hat: T,
    points: &[(Vec<T>, Vec<T>)],
) -> Result<CheckReport<T>, DiagnosticsError> {
    if !prob.has_third_order() {
        return Err(DiagnosticsError::NotApplicable {
            check: "descent",
            requirement: "third-order oracles (exact element on the left side)",
        });
    }
    let c = prob.constants();
    let th = Thresholds::from_constants(&c);
    let tight = cast::<T>(1e-12);
    let quarter = cast::<T>(0.25);
    let (delta, name): (T, &'static str) = match variant {
        FieldVariant::HatDh => {
            if beta < th.beta_alg1 {
                return Err(DiagnosticsError::HypothesisViolated {
                    check: "descent_hat_dh",
                    detail: format!(
                        "β ≥ 2·M_f·Q_g/μ³ required ({:.6e}), got {:.6e}",
                        to_f64(th.beta_alg1),
                        to_f64(beta)
                    ),
                });
            }
            let two_minus_sqrt2 = cast::<T>(2.0 - std::f64::consts::SQRT_2);
            (
                T::one().min(two_minus_sqrt2 * c.mu / cast(2.0)),
                "descent_hat_dh",
            )
        }
        FieldVariant::HatDs => {
            if beta < th.beta_alg2 || beta_hat < beta * th.beta_hat_factor {
                return Err(DiagnosticsError::HypothesisViolated {
                    check: "descent_hat_ds",
                    detail: format!(
                        "β ≥ 4·M_f·Q_g/μ³ and β̂ ≥ β·max(8·L_g²/μ, 1/(4μ), μ/4) required, got β={:.6e}, β̂={:.6e}",
                        to_f64(beta),
                        to_f64(beta_hat)
                    ),
                });
            }
            (
                quarter.min(beta * beta / (cast::<T>(16.0) * beta_hat * beta_hat)),
                "descent_hat_ds",
            )
        }
        FieldVariant::HatDp => {
            if beta < th.beta_alg3 {
                return Err(DiagnosticsError::HypothesisViolated {
                    check: "descent_hat_dp",
                    detail: format!(
                        "β ≥ max(8·M_f·Q_g/μ³, 4·M_f·Q_g·L_g/μ^3.5) required ({:.6e}), got {:.6e}",
                        to_f64(th.beta_alg3),
                        to_f64(beta)
                    ),
                });
            }
            (
                (c.mu * c.mu / (cast::<T>(4.0) * c.l_g * c.l_g)).min(c.mu * quarter),
                "descent_hat_dp",
            )
        }
        FieldVariant::ExactDh => {
            return Err(DiagnosticsError::NotApplicable {
                check: "descent",
                requirement: "one of the approximate variants",
            })
        }
    };

    let slack = cast::<T>(1e-9);
    let mut worst_margin = T::infinity();
    for (x, y) in points {
        let exact = element_exact_dh(prob, x, y, beta)?;
        let approx = match variant {
            FieldVariant::HatDh => element_hat_dh(prob, x, y, beta, tight, tight)?,
            FieldVariant::HatDs => element_hat_ds(prob, x, y, beta_hat, tight, tight)?,
            FieldVariant::HatDp => element_hat_dp(prob, x, y, beta, tight)?,
            FieldVariant::ExactDh => unreachable!(),
        };
        let lhs = dot(&exact.dir_x, &approx.dir_x) + dot(&exact.dir_y, &approx.dir_y);
        let dn = approx.dir_norm();
        let rhs = delta * dn * dn - slack;
        worst_margin = worst_margin.min(lhs - rhs);
    }
    Ok(CheckReport {
        name,
        passed: worst_margin >= T::zero(),
        points: points.len(),
        worst_margin,
        constant: delta,
        detail: "<exact element, dir> >= delta ||dir||^2 - 1e-9".into(),
    })
}

/// Per-quantity tolerances for the stationarity-equivalence check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquivalenceTols<T> {
    pub dir: T,
    pub feas: T,
    pub stat: T,
}

impl<T: Copy> EquivalenceTols<T> {
    pub fn uniform(tol: T) -> Self {
        Self {
            dir: tol,
            feas: tol,
            stat: tol,
        }
    }
}

/// Certifies that a returned point is stationary in both senses at once:
/// the variant's direction norm, the feasibility residual, and the
/// hypergradient residual must all sit below their tolerances (everything
/// evaluated at inner tolerance `1e-12`). Violated quantities are named in
/// the detail.
pub fn check_equivalence_at_solution<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    variant: FieldVariant,
    beta: T,
    beta_hat: T,
    x: &[T],
    y: &[T],
    tols: EquivalenceTols<T>,
) -> Result<CheckReport<T>, DiagnosticsError> {
    let tight = cast::<T>(1e-12);
    let element = match variant {
        FieldVariant::ExactDh => element_exact_dh(prob, x, y, beta)?,
        FieldVariant::HatDh => element_hat_dh(prob, x, y, beta, tight, tight)?,
        FieldVariant::HatDs => element_hat_ds(prob, x, y, beta_hat, tight, tight)?,
        FieldVariant::HatDp => element_hat_dp(prob, x, y, beta, tight)?,
    };
    let dir_norm = element.dir_norm();
    let measure = stationarity_measure(prob, x, y, tight)?;

    let mut violations: Vec<String> = Vec::new();
    if dir_norm > tols.dir {
        violations.push(format!(
            "direction norm {:.3e} > {:.3e}",
            to_f64(dir_norm),
            to_f64(tols.dir)
        ));
    }
    if measure.feas > tols.feas {
        violations.push(format!(
            "feas {:.3e} > {:.3e}",
            to_f64(measure.feas),
            to_f64(tols.feas)
        ));
    }
    if measure.stat_x > tols.stat {
        violations.push(format!(
            "stat_x {:.3e} > {:.3e}",
            to_f64(measure.stat_x),
            to_f64(tols.stat)
        ));
    }
    let worst_margin = (tols.dir - dir_norm)
        .min(tols.feas - measure.feas)
        .min(tols.stat - measure.stat_x);
    Ok(CheckReport {
        name: "equivalence_at_solution",
        passed: violations.is_empty(),
        points: 1,
        worst_margin,
        constant: tols.dir,
        detail: if violations.is_empty() {
            format!(
                "dir {:.3e}, feas {:.3e}, stat_x {:.3e} all within tolerance",
                to_f64(dir_norm),
                to_f64(measure.feas),
                to_f64(measure.stat_x)
            )
        } else {
            violations.join("; ")
        },
    })
}

/// Verifies lower boundedness of the penalty objective:
/// for `beta >= m_f q_g / mu^3`, sampled `h >= phi_inf - 1e-9`.
pub fn check_boundedness<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    beta: T,
    phi_inf: T,
    points: &[(Vec<T>, Vec<T>)],
) -> Result<CheckReport<T>, DiagnosticsError> {
    let c = prob.constants();
    let th = Thresholds::from_constants(&c);
    if beta < th.beta_bounded {
        return Err(DiagnosticsError::HypothesisViolated {
            check: "boundedness",
            detail: format!(
                "β ≥ M_f·Q_g/μ³ required ({:.6e}), got {:.6e}",
                to_f64(th.beta_bounded),
                to_f64(beta)
            ),
        });
    }
    let slack = cast::<T>(1e-9);
    let mut worst_margin = T::infinity();
    for (x, y) in points {
        let h = h_value(prob, x, y, beta, cast(1e-12))?;
        worst_margin = worst_margin.min(h - (phi_inf - slack));
    }
    Ok(CheckReport {
        name: "boundedness",
        passed: worst_margin >= T::zero(),
        points: points.len(),
        worst_margin,
        constant: phi_inf,
        detail: "h(x, y) >= inf_x f(x, y*(x)) - 1e-9".into(),
    })
}

/// Probes the Lipschitz bound `q_g / mu^2` on the inverse Hessian: the
/// finite-difference ratio
/// `||H(x + t d, y)^{-1} - H(x, y)^{-1}||_probe / t` must stay below
/// `q_g/mu^2 + slack(t)` with `slack(t) = 10 (q_g/mu^2) t + 1e-8`. The
/// probe norm takes the max over 20 random unit vectors; solves run to
/// stagnation.
pub fn check_inverse_hessian_lipschitz<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    points: &[(Vec<T>, Vec<T>)],
    t_values: &[T],
    seed: u64,
) -> Result<CheckReport<T>, DiagnosticsError> {
    let c = prob.constants();
    let bound = c.q_g / (c.mu * c.mu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1b);
    let n = prob.dim_x();
    let p = prob.dim_y();
    let mut worst_margin = T::infinity();
    for (x, y) in points {
        let d = random_unit::<T>(&mut rng, n);
        for &t in t_values {
            let mut xp = x.clone();
            axpy(&mut xp, t, &d);
            let mut probe_norm = T::zero();
            for _ in 0..20 {
                let v = random_unit::<T>(&mut rng, p);
                let base = solve_at(prob, x, y, &v)?;
                let moved = solve_at(prob, &xp, y, &v)?;
                probe_norm = probe_norm.max(norm(&sub(&moved, &base)));
            }
            let ratio = probe_norm / t;
            let slack = cast::<T>(10.0) * bound * t + cast::<T>(1e-8);
            worst_margin = worst_margin.min(bound + slack - ratio);
        }
    }
    return Ok(CheckReport {
        name: "inverse_hessian_lipschitz",
        passed: worst_margin >= T::zero(),
        points: points.len(),
        worst_margin,
        constant: bound,
        detail: "||H(x+td)^{-1} - H(x)^{-1}||_probe / t <= q_g/mu^2 + slack(t)".into(),
    });

    fn solve_at<T: Scalar>(
        prob: &dyn BilevelProblem<T>,
        x: &[T],
        y: &[T],
        v: &[T],
    ) -> Result<Vec<T>, DiagnosticsError> {
        let op = prob.hess_yy(x, y);
        let (sol, report) = crate::linalg::cg_solve(op.as_ref(), v, T::zero(), 20 * y.len().max(1));
        if !report.converged {
            return Err(DiagnosticsError::Field(FieldError::InnerSolve {
                label: "lipschitz_probe",
                residual: to_f64(report.residual_norm),
                requested: 0.0,
                iterations: report.iterations,
            }));
        }
        Ok(sol)
    }
}

/// Directional probe of the Lipschitz surrogate for the composed upper
/// level: `|f(x, A(x, y + t d)) - f(x, A(x, y))| / t` must stay below
/// `(m_f q_g / mu^2) ||grad_y_g|| ||d|| + slack(t)` with
/// `slack(t) = 10 (m_f q_g l_g / mu^2 + m_f q_g / mu) t`.
pub fn check_composed_directional<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    points: &[(Vec<T>, Vec<T>)],
    t_values: &[T],
    seed: u64,
) -> Result<CheckReport<T>, DiagnosticsError> {
    let c = prob.constants();
    let mq = c.m_f * c.q_g;
    let factor = mq / (c.mu * c.mu);
    let slack_rate = cast::<T>(10.0) * (mq * c.l_g / (c.mu * c.mu) + mq / c.mu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2c);
    let p = prob.dim_y();
    let mut worst_margin = T::infinity();
    for (x, y) in points {
        let d = random_unit::<T>(&mut rng, p);
        let feas = norm(&prob.grad_y_g(x, y));
        let base = newton_map(prob, x, y, cast(1e-12))?;
        let f_base = prob.f_value(x, &base.a_y);
        for &t in t_values {
            let mut yt = y.clone();
            axpy(&mut yt, t, &d);
            let moved = newton_map(prob, x, &yt, cast(1e-12))?;
            let rate = (prob.f_value(x, &moved.a_y) - f_base).abs() / t;
            // Floating-point floor: the two f evaluations round at unit
            // scale before the division by t.
            let fp_floor = cast::<T>(1e-9) / t;
            let allowed = factor * feas + slack_rate * t + fp_floor;
            worst_margin = worst_margin.min(allowed - rate);
        }
    }
    Ok(CheckReport {
        name: "composed_directional",
        passed: worst_margin >= T::zero(),
        points: points.len(),
        worst_margin,
        constant: factor,
        detail: "|f(x, A(x, y+td)) - f(x, A(x,y))|/t <= (m_f q_g/mu^2) ||grad|| ||d|| + slack(t)"
            .into(),
    })
}

/// Runs every check applicable to a preset (thresholded penalties are
/// placed at 1.01x their bounds, floored at 1 when a threshold vanishes).
/// The stationarity-equivalence check needs a solver endpoint and is not
/// part of this battery.
pub fn run_battery<T: Scalar>(
    preset: &Preset<T>,
    points: usize,
    seed: u64,
) -> Result<Vec<CheckReport<T>>, DiagnosticsError> {
    let prob = preset.problem.as_ref();
    let c = prob.constants();
    let th = Thresholds::from_constants(&c);
    let margin = cast::<T>(1.01);
    let floor = T::one();
    let pts = sample_points(prob, points, seed, preset.sample_radius);
    let mut reports = Vec::new();

    if preset.f_smooth && prob.has_third_order() {
        let beta = (th.beta_alg1 * margin).max(floor);
        reports.push(check_gradient_fd(prob, beta, &pts)?);
    }
    reports.push(check_contraction(prob, &pts)?);
    if prob.has_third_order() {
        let beta1 = (th.beta_alg1 * margin).max(floor);
        reports.push(check_descent(prob, FieldVariant::HatDh, beta1, T::zero(), &pts)?);
        let beta2 = (th.beta_alg2 * margin).max(floor);
        let beta_hat = beta2 * th.beta_hat_factor * margin;
        reports.push(check_descent(prob, FieldVariant::HatDs, beta2, beta_hat, &pts)?);
        let beta3 = (th.beta_alg3 * margin).max(floor);
        reports.push(check_descent(prob, FieldVariant::HatDp, beta3, T::zero(), &pts)?);
    }
    if let Some(phi_inf) = preset.phi_inf {
        let beta = (th.beta_bounded * margin).max(floor);
        reports.push(check_boundedness(prob, beta, phi_inf, &pts)?);
    }
    let ts = [cast::<T>(1e-4), cast::<T>(1e-5)];
    reports.push(check_inverse_hessian_lipschitz(prob, &pts, &ts, seed)?);
    reports.push(check_composed_directional(prob, &pts, &ts, seed)?);

    Ok(reports)
}

//! The constraint-dissolving map, the penalty objective, and the field
//! elements used as update directions.
//!
//! The map `A(x, y) = y - hess_yy(x,y)^{-1} grad_y_g(x, y)` is one exact
//! Newton step on the lower-level problem; it fixes the feasible manifold
//! pointwise. The penalty objective is
//! `h(x, y) = f(x, A(x, y)) + (beta/2) ||grad_y_g(x, y)||^2`.
//!
//! Four direction variants are assembled here, all sharing the same
//! structure — pick a derivative element `(d_x, d_y)` of `f` at the Newton
//! probe point, then correct it through the Hessian blocks of `g`:
//!
//! * `ExactDh` — the full derivative of `h`, including the third-order
//!   correction terms. Diagnostics-grade: inner solves run at `1e-12` and
//!   third-order oracles are required.
//! * `HatDh` — drops the third-order terms, keeps the `beta`-coupling in
//!   both blocks. The basic subgradient method steps along this.
//! * `HatDs` — hypergradient in `x`, plain scaled lower-level gradient
//!   (weight `beta_hat`) in `y`.
//! * `HatDp` — hypergradient in `x`, with the `y`-step corrected by the
//!   transported hypergradient.
//!
//! Every inverse-Hessian application goes through conjugate gradients with
//! an explicit residual tolerance; nothing here ever factorizes a matrix,
//! and no solver path touches third derivatives.

use serde::Serialize;

use crate::linalg::{axpy, cg_solve, norm, sub};
use crate::problem::BilevelProblem;
use crate::scalar::{cast, to_f64, Scalar};

/// Fixed inner tolerance for diagnostics-grade evaluations.
const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error(
        "inner solve `{label}` stopped at residual {residual:.3e} (requested {requested:.3e}) \
         after {iterations} CG iterations; the lower-level Hessian may be ill-conditioned or \
         mis-specified"
    )]
    InnerSolve {
        label: &'static str,
        residual: f64,
        requested: f64,
        iterations: usize,
    },
    #[error("this operation needs third-order oracles, which the problem does not provide")]
    MissingThirdOrder,
    #[error(
        "damped Newton on the lower level reached residual {residual:.3e} \
         (requested {requested:.3e}) after {iterations} iterations"
    )]
    NewtonStalled {
        residual: f64,
        requested: f64,
        iterations: usize,
    },
}

/// Which field variant a direction was assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FieldVariant {
    ExactDh,
    HatDh,
    HatDs,
    HatDp,
}

/// Record of one inner CG solve inside a field-element assembly.
#[derive(Debug, Clone, Serialize)]
pub struct InnerSolve<T> {
    pub label: &'static str,
    pub residual: T,
    pub requested: T,
    pub iterations: usize,
}

/// An assembled update direction, together with the derivative element it
/// was built from and the point that element was selected at.
#[derive(Debug, Clone, Serialize)]
pub struct FieldElement<T> {
    pub variant: FieldVariant,
    /// Derivative element of `f`, selected at `(x, probe_y)`.
    pub d_x: Vec<T>,
    pub d_y: Vec<T>,
    /// The probe point `y - w` the element was selected at.
    pub probe_y: Vec<T>,
    /// Update direction.
    pub dir_x: Vec<T>,
    pub dir_y: Vec<T>,
    /// Hypergradient residual `||d_x - hess_xy(hess_yy^{-1} d_y)||` at this
    /// assembly's inner tolerance.
    pub stat_x: T,
    pub inner: Vec<InnerSolve<T>>,
}

impl<T: Scalar> FieldElement<T> {
    pub fn dir_norm(&self) -> T {
        crate::linalg::norm_pair(&self.dir_x, &self.dir_y)
    }
}

/// Current point with cached lower-level quantities.
#[derive(Debug, Clone)]
pub struct Iterate<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    /// Cached `grad_y_g(x, y)`; matches a fresh oracle call exactly because
    /// the oracles are deterministic.
    pub grad_y_g: Vec<T>,
    /// Feasibility residual `||grad_y_g||`.
    pub feas: T,
    /// Last Newton-step estimate, when one was computed at this point.
    pub w: Option<Vec<T>>,
}

impl<T: Scalar> Iterate<T> {
    pub fn new(prob: &dyn BilevelProblem<T>, x: Vec<T>, y: Vec<T>) -> Self {
        let grad = prob.grad_y_g(&x, &y);
        let feas = norm(&grad);
        Self {
            x,
            y,
            grad_y_g: grad,
            feas,
            w: None,
        }
    }
}

/// Result of evaluating the constraint-dissolving map at one point.
#[derive(Debug, Clone)]
pub struct NewtonStep<T> {
    /// `A(x, y) = y - w`.
    pub a_y: Vec<T>,
    /// Inexact Newton step with `||hess_yy w - grad_y_g|| <= eps`.
    pub w: Vec<T>,
    pub residual: T,
    pub iterations: usize,
}

fn solve_hess_yy<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    rhs: &[T],
    eps: T,
    label: &'static str,
) -> Result<(Vec<T>, InnerSolve<T>), FieldError> {
    let op = prob.hess_yy(x, y);
    let cap = 10 * prob.dim_y();
    let (sol, report) = cg_solve(op.as_ref(), rhs, eps, cap);
    if !report.converged {
        return Err(FieldError::InnerSolve {
            label,
            residual: to_f64(report.residual_norm),
            requested: to_f64(eps),
            iterations: report.iterations,
        });
    }
    Ok((
        sol,
        InnerSolve {
            label,
            residual: report.residual_norm,
            requested: eps,
            iterations: report.iterations,
        },
    ))
}

/// Evaluates `A(x, y)` by solving `hess_yy w = grad_y_g` to residual `eps`
/// (`eps = 0` solves to machine-precision stagnation) and returning
/// `a_y = y - w`.
pub fn newton_map<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    eps: T,
) -> Result<NewtonStep<T>, FieldError> {
    let grad = prob.grad_y_g(x, y);
    let (w, solve) = solve_hess_yy(prob, x, y, &grad, eps, "newton_step")?;
    let a_y = sub(y, &w);
    Ok(NewtonStep {
        a_y,
        w,
        residual: solve.residual,
        iterations: solve.iterations,
    })
}

/// Penalty objective `h(x, y) = f(x, A(x, y)) + (beta/2) ||grad_y_g||^2`,
/// with the map evaluated at inner tolerance `eps`.
pub fn h_value<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    beta: T,
    eps: T,
) -> Result<T, FieldError> {
    assert!(beta > T::zero(), "penalty weight must be positive");
    let step = newton_map(prob, x, y, eps)?;
    let grad = prob.grad_y_g(x, y);
    let half = cast::<T>(0.5);
    Ok(prob.f_value(x, &step.a_y) + half * beta * crate::linalg::dot(&grad, &grad))
}

/// The full derivative element of `h`, third-order terms included.
///
/// With `(d_x, d_y)` selected at `(x, A(x, y))`, `w = hess_yy^{-1} grad_y_g`
/// and `u = hess_yy^{-1} d_y`:
///
/// ```text
/// dir_x = d_x - hess_xy u + third_xyy[w] u + beta hess_xy grad
/// dir_y =                   third_yyy[w] u + beta hess_yy grad
/// ```
///
/// Requires third-order oracles; inner solves run at `1e-12`.
pub fn element_exact_dh<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    beta: T,
) -> Result<FieldElement<T>, FieldError> {
    if !prob.has_third_order() {
        return Err(FieldError::MissingThirdOrder);
    }
    let eps = cast::<T>(EXACT_TOL);
    let grad = prob.grad_y_g(x, y);
    let (w, solve_w) = solve_hess_yy(prob, x, y, &grad, eps, "newton_step")?;
    let a_y = sub(y, &w);
    let (d_x, d_y) = prob.df_element(x, &a_y);
    let (u, solve_u) = solve_hess_yy(prob, x, y, &d_y, eps, "dual_step")?;

    let hxy = prob.hess_xy(x, y);
    let hyy = prob.hess_yy(x, y);
    let t_xyy = prob.third_xyy(x, y, &w).ok_or(FieldError::MissingThirdOrder)?;
    let t_yyy = prob.third_yyy(x, y, &w).ok_or(FieldError::MissingThirdOrder)?;

    let hyp = sub(&d_x, &hxy.apply(&u));
    let stat_x = norm(&hyp);

    let mut dir_x = hyp;
    axpy(&mut dir_x, T::one(), &t_xyy.apply(&u));
    axpy(&mut dir_x, beta, &hxy.apply(&grad));

    let mut dir_y = t_yyy.apply(&u);
    axpy(&mut dir_y, beta, &hyy.apply(&grad));

    Ok(FieldElement {
        variant: FieldVariant::ExactDh,
        d_x,
        d_y,
        probe_y: a_y,
        dir_x,
        dir_y,
        stat_x,
        inner: vec![solve_w, solve_u],
    })
}

/// Basic-variant element: third-order terms dropped, `beta`-coupling kept.
///
/// `w` is solved to `eps1`, the element is selected at `(x, y - w)`, `v`
/// solves `hess_yy v = d_y` to `eps2`, and
///
/// ```text
/// dir_x = d_x - hess_xy (v - beta grad),    dir_y = beta grad.
/// ```
pub fn element_hat_dh<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    beta: T,
    eps1: T,
    eps2: T,
) -> Result<FieldElement<T>, FieldError> {
    let grad = prob.grad_y_g(x, y);
    let (w, solve_w) = solve_hess_yy(prob, x, y, &grad, eps1, "newton_step")?;
    let probe_y = sub(y, &w);
    let (d_x, d_y) = prob.df_element(x, &probe_y);
    let (v, solve_v) = solve_hess_yy(prob, x, y, &d_y, eps2, "dual_step")?;

    let hxy = prob.hess_xy(x, y);
    let stat_x = norm(&sub(&d_x, &hxy.apply(&v)));

    let mut shifted = v.clone();
    axpy(&mut shifted, -beta, &grad);
    let dir_x = sub(&d_x, &hxy.apply(&shifted));
    let dir_y: Vec<T> = grad.iter().map(|&g| beta * g).collect();

    Ok(FieldElement {
        variant: FieldVariant::HatDh,
        d_x,
        d_y,
        probe_y,
        dir_x,
        dir_y,
        stat_x,
        inner: vec![solve_w, solve_v],
    })
}

/// Two-scale variant: hypergradient in `x`, lower-level gradient scaled by
/// the prefixed weight `beta_hat` in `y`.
pub fn element_hat_ds<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    beta_hat: T,
    eps1: T,
    eps2: T,
) -> Result<FieldElement<T>, FieldError> {
    let grad = prob.grad_y_g(x, y);
    let (w, solve_w) = solve_hess_yy(prob, x, y, &grad, eps1, "newton_step")?;
    let probe_y = sub(y, &w);
    let (d_x, d_y) = prob.df_element(x, &probe_y);
    let (v, solve_v) = solve_hess_yy(prob, x, y, &d_y, eps2, "dual_step")?;

    let hxy = prob.hess_xy(x, y);
    let dir_x = sub(&d_x, &hxy.apply(&v));
    let stat_x = norm(&dir_x);
    let dir_y: Vec<T> = grad.iter().map(|&g| beta_hat * g).collect();

    Ok(FieldElement {
        variant: FieldVariant::HatDs,
        d_x,
        d_y,
        probe_y,
        dir_x,
        dir_y,
        stat_x,
        inner: vec![solve_w, solve_v],
    })
}

/// Projected variant: with `p_x = d_x - hess_xy(hess_yy^{-1} d_y)`,
///
/// ```text
/// dir_x = p_x,    dir_y = beta grad - hess_yy^{-1}(hess_yx p_x),
/// ```
///
/// i.e. `W'W (d_x, d_y) + (0, beta grad)` for
/// `W = [I, -hess_xy hess_yy^{-1}]`. The solves inside `p_x` and the
/// `y`-correction run at `min(eps1, 1e-10)`.
pub fn element_hat_dp<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    beta: T,
    eps1: T,
) -> Result<FieldElement<T>, FieldError> {
    let grad = prob.grad_y_g(x, y);
    let (w, solve_w) = solve_hess_yy(prob, x, y, &grad, eps1, "newton_step")?;
    let probe_y = sub(y, &w);
    let (d_x, d_y) = prob.df_element(x, &probe_y);

    let tight = eps1.min(cast(1e-10));
    let (u, solve_u) = solve_hess_yy(prob, x, y, &d_y, tight, "dual_step")?;

    let hxy = prob.hess_xy(x, y);
    let hyx = prob.hess_yx(x, y);
    let p_x = sub(&d_x, &hxy.apply(&u));
    let stat_x = norm(&p_x);

    let transported = hyx.apply(&p_x);
    let (s, solve_s) = solve_hess_yy(prob, x, y, &transported, tight, "y_correction")?;

    let dir_y: Vec<T> = grad.iter().zip(&s).map(|(&g, &si)| beta * g - si).collect();

    Ok(FieldElement {
        variant: FieldVariant::HatDp,
        d_x,
        d_y,
        probe_y,
        dir_x: p_x,
        dir_y,
        stat_x,
        inner: vec![solve_w, solve_u, solve_s],
    })
}

/// Feasibility and hypergradient residuals at a point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stationarity<T> {
    /// `||grad_y_g(x, y)||`: zero exactly on the lower-level solution
    /// manifold.
    pub feas: T,
    /// `||d_x - hess_xy(hess_yy^{-1} d_y)||` with the element selected at
    /// `(x, A(x, y))`.
    pub stat_x: T,
}

/// Computes both stationarity residuals with inner solves at `eps`.
pub fn stationarity_measure<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y: &[T],
    eps: T,
) -> Result<Stationarity<T>, FieldError> {
    let grad = prob.grad_y_g(x, y);
    let feas = norm(&grad);
    let (w, _) = solve_hess_yy(prob, x, y, &grad, eps, "newton_step")?;
    let a_y = sub(y, &w);
    let (d_x, d_y) = prob.df_element(x, &a_y);
    let (u, _) = solve_hess_yy(prob, x, y, &d_y, eps, "dual_step")?;
    let hxy = prob.hess_xy(x, y);
    let stat_x = norm(&sub(&d_x, &hxy.apply(&u)));
    Ok(Stationarity { feas, stat_x })
}

/// Result of the damped-Newton lower-level solve.
#[derive(Debug, Clone)]
pub struct LowerSolve<T> {
    pub y: Vec<T>,
    pub residual: T,
    pub iterations: usize,
}

/// Minimizes `g(x, .)` by damped Newton (Armijo backtracking on `g`, full
/// steps near the solution) to gradient residual `tol`. This is the
/// reference oracle for `y*(x)`; CG sub-solves run to stagnation.
pub fn lower_level_minimizer<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    x: &[T],
    y0: &[T],
    tol: T,
    max_iters: usize,
) -> Result<LowerSolve<T>, FieldError> {
    let mut y = y0.to_vec();
    let mut residual = T::infinity();
    for it in 0..max_iters {
        let grad = prob.grad_y_g(x, &y);
        residual = norm(&grad);
        if residual <= tol {
            return Ok(LowerSolve {
                y,
                residual,
                iterations: it,
            });
        }
        let (step, _) = solve_hess_yy(prob, x, &y, &grad, T::zero(), "newton_step")?;

        // Full step first: near the solution Newton contracts the gradient
        // quadratically, and a value-based test would drown in rounding.
        let mut y_full = y.clone();
        axpy(&mut y_full, -T::one(), &step);
        let res_full = norm(&prob.grad_y_g(x, &y_full));
        if res_full <= cast::<T>(0.5) * residual {
            y = y_full;
            continue;
        }

        // Damped phase: Armijo backtracking on the value of g.
        let slope = crate::linalg::dot(&grad, &step);
        let g0 = prob.g_value(x, &y);
        let mut t = T::one();
        let c: T = cast(1e-4);
        let mut accepted = false;
        for _ in 0..60 {
            let mut y_try = y.clone();
            axpy(&mut y_try, -t, &step);
            if prob.g_value(x, &y_try) <= g0 - c * t * slope {
                y = y_try;
                accepted = true;
                break;
            }
            t = t * cast(0.5);
        }
        if !accepted {
            if res_full < residual {
                y = y_full;
            } else {
                break;
            }
        }
    }
    Err(FieldError::NewtonStalled {
        residual: to_f64(residual),
        requested: to_f64(tol),
        iterations: max_iters,
    })
}

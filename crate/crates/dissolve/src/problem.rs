//! The oracle interface a bilevel problem must expose, and numerical
//! validation of that contract.
//!
//! A problem supplies value/derivative oracles for the upper level `f` and
//! the lower level `g`, Hessian blocks of `g` as matrix-free operators, and
//! the four constants the penalty thresholds are built from. Constants are
//! user-supplied, never estimated: the thresholds that make the penalty
//! reformulation equivalent to the bilevel problem need true bounds, and a
//! silently estimated constant would void those guarantees. Built-in
//! problems ship exact (or certified upper/lower) values.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::{axpy, dot, norm, norm_pair, scaled, sub};
use crate::scalar::{cast, to_f64, Scalar};

/// Matrix-free linear operator.
///
/// `apply` must be linear to numerical precision; [`validate_problem`]
/// probes this on random vectors.
pub trait LinearOp<T: Scalar> {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn apply(&self, v: &[T]) -> Vec<T>;
}

/// A dense-matrix operator, row-major. The workhorse behind the built-in
/// problems at desk scale.
pub struct DenseOp<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseOp<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }
}

impl<T: Scalar> LinearOp<T> for DenseOp<T> {
    fn dim_in(&self) -> usize {
        self.cols
    }
    fn dim_out(&self) -> usize {
        self.rows
    }
    fn apply(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        let mut out = vec![T::zero(); self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = dot(row, v);
        }
        out
    }
}

/// Operator defined by a closure; handy for wrappers and tests.
pub struct FnOp<T, F: Fn(&[T]) -> Vec<T>> {
    dim_in: usize,
    dim_out: usize,
    f: F,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar, F: Fn(&[T]) -> Vec<T>> FnOp<T, F> {
    pub fn new(dim_in: usize, dim_out: usize, f: F) -> Self {
        Self {
            dim_in,
            dim_out,
            f,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar, F: Fn(&[T]) -> Vec<T>> LinearOp<T> for FnOp<T, F> {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn apply(&self, v: &[T]) -> Vec<T> {
        (self.f)(v)
    }
}

/// The four constants every threshold and inequality is built from.
///
/// * `mu` — strong-convexity modulus of `g` in `y` (lower bound, `> 0`);
/// * `l_g` — Lipschitz constant of the full gradient of `g` (`>= mu`);
/// * `q_g` — Lipschitz constant of both Hessian blocks (`>= 0`);
/// * `m_f` — Lipschitz constant of `f`, bounding every generalized-derivative
///   element the problem can emit (`> 0`).
///
/// Conservative values are safe: a larger `l_g`, `q_g`, or `m_f` (or smaller
/// `mu`) weakens the asserted inequalities but never invalidates them. For
/// upper levels that are only locally Lipschitz, `m_f` certifies the region
/// a run actually visits; the guarantees hold there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants<T> {
    pub mu: T,
    pub l_g: T,
    pub q_g: T,
    pub m_f: T,
}

impl<T: Scalar> ProblemConstants<T> {
    /// Basic sign/ordering sanity; full numerical certification is
    /// [`validate_problem`]'s job.
    pub fn check(&self) -> Result<(), String> {
        if !(self.mu > T::zero()) {
            return Err(format!("mu must be > 0, got {}", self.mu));
        }
        if !(self.l_g >= self.mu) {
            return Err(format!("l_g must be >= mu, got l_g={} mu={}", self.l_g, self.mu));
        }
        if !(self.q_g >= T::zero()) {
            return Err(format!("q_g must be >= 0, got {}", self.q_g));
        }
        if !(self.m_f > T::zero()) {
            return Err(format!("m_f must be > 0, got {}", self.m_f));
        }
        Ok(())
    }
}

/// Oracle bundle for one bilevel problem.
///
/// Dimensions: `x` has length `dim_x` (upper variable), `y` has length
/// `dim_y` (lower variable). Requirements the solvers lean on:
///
/// * `hess_yy` is symmetric with spectrum inside `[mu, l_g]`;
/// * `grad_y_g` is the gradient of `g_value` in `y`, and the Hessian blocks
///   are its derivatives;
/// * `df_element` returns one element of the upper-level generalized
///   derivative at `(x, y)`, deterministically — identical inputs must give
///   identical outputs, which is what makes runs and traces reproducible;
/// * `||(d_x, d_y)|| <= m_f` for every element returned.
///
/// The third-order directional operators are optional. Only diagnostics
/// consume them; no solver code path touches third derivatives.
///
/// Oracles must be safe to call concurrently (the built-in problems are
/// immutable after construction); a single-use implementation should be
/// cloned per run by the harness.
pub trait BilevelProblem<T: Scalar> {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn constants(&self) -> ProblemConstants<T>;

    fn f_value(&self, x: &[T], y: &[T]) -> T;
    /// One deterministic element `(d_x, d_y)` of the generalized derivative
    /// of `f` at `(x, y)`.
    fn df_element(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>);

    fn g_value(&self, x: &[T], y: &[T]) -> T;
    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T>;

    /// `hess_yy g(x, y)`: `dim_y -> dim_y`, symmetric positive definite.
    fn hess_yy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a>;
    /// `hess_xy g(x, y)`: `dim_y -> dim_x` (the `n x p` mixed block).
    fn hess_xy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a>;
    /// Transpose of `hess_xy`: `dim_x -> dim_y`.
    fn hess_yx<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a>;

    /// Directional derivative of `hess_xy` along `d` in `y` (`dim_y -> dim_x`).
    fn third_xyy<'a>(&'a self, _x: &[T], _y: &[T], _d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        None
    }
    /// Directional derivative of `hess_yy` along `d` in `y` (`dim_y -> dim_y`).
    fn third_yyy<'a>(&'a self, _x: &[T], _y: &[T], _d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        None
    }

    fn has_third_order(&self) -> bool {
        false
    }
}

/// One named validation check with its worst observed margin.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the probed quantity (ratio, error, ...).
    pub worst: f64,
    /// Threshold the worst value was compared against.
    pub bound: f64,
    pub detail: String,
}

/// Outcome of [`validate_problem`]: per-invariant verdicts plus a global
/// usability flag.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub usable: bool,
    pub all_passed: bool,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, check: ValidationCheck) {
        if !check.passed {
            self.all_passed = false;
        }
        self.checks.push(check);
    }
}

fn sample_vec<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<T> {
    (0..dim).map(|_| cast(rng.gen_range(-radius..radius))).collect()
}

fn unit_vec<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T> {
    loop {
        let v: Vec<T> = sample_vec(rng, dim, 1.0);
        let n = norm(&v);
        if n > cast(1e-3) {
            return scaled(&v, T::one() / n);
        }
    }
}

/// Numerically certifies a problem's contract on seeded random points.
///
/// Probes, per sampled point from the `[-10, 10]` cell: oracle evaluation
/// (a panicking oracle marks the problem unusable and is named in the
/// report), operator linearity and symmetry, the `[mu, l_g]` spectral
/// envelope of `hess_yy`, finite-difference consistency of `grad_y_g` with
/// `g_value` and of the Hessian blocks with `grad_y_g`, determinism and the
/// `m_f` bound of `df_element`, and (when present) finite-difference
/// consistency of the third-order operators.
pub fn validate_problem<T: Scalar>(
    prob: &dyn BilevelProblem<T>,
    samples: usize,
    seed: u64,
) -> ValidationReport {
    assert!(samples >= 1, "samples must be >= 1");
    let mut report = ValidationReport {
        usable: true,
        all_passed: true,
        checks: Vec::new(),
    };

    let n = prob.dim_x();
    let p = prob.dim_y();
    let consts = prob.constants();
    if let Err(msg) = consts.check() {
        report.usable = false;
        report.push(ValidationCheck {
            name: "constants",
            passed: false,
            worst: f64::NAN,
            bound: 0.0,
            detail: msg,
        });
        return report;
    }

    let mut rng = rand_chacha::rand_core::SeedableRng::seed_from_u64(seed);
    let points: Vec<(Vec<T>, Vec<T>)> = (0..samples)
        .map(|_| (sample_vec(&mut rng, n, 10.0), sample_vec(&mut rng, p, 10.0)))
        .collect();

    // Every oracle must evaluate without raising before anything else is
    // probed.
    {
        let (x, y) = &points[0];
        let d = unit_vec::<T>(&mut rng, p);
        type Probe<'c> = (&'static str, Box<dyn Fn() + 'c>);
        let probes: Vec<Probe<'_>> = vec![
            ("f_value", Box::new(|| {
                prob.f_value(x, y);
            })),
            ("df_element", Box::new(|| {
                prob.df_element(x, y);
            })),
            ("g_value", Box::new(|| {
                prob.g_value(x, y);
            })),
            ("grad_y_g", Box::new(|| {
                prob.grad_y_g(x, y);
            })),
            ("hess_yy", Box::new(|| {
                prob.hess_yy(x, y).apply(&d);
            })),
            ("hess_xy", Box::new(|| {
                prob.hess_xy(x, y).apply(&d);
            })),
            ("hess_yx", Box::new(|| {
                let e = vec![T::one(); n];
                prob.hess_yx(x, y).apply(&e);
            })),
        ];
        for (name, call) in probes {
            if catch_unwind(AssertUnwindSafe(call)).is_err() {
                report.usable = false;
                report.push(ValidationCheck {
                    name: "oracle_evaluation",
                    passed: false,
                    worst: f64::NAN,
                    bound: 0.0,
                    detail: format!("oracle `{name}` raised on evaluation; problem unusable"),
                });
                return report;
            }
        }
    }
    report.push(ValidationCheck {
        name: "oracle_evaluation",
        passed: true,
        worst: 0.0,
        bound: 0.0,
        detail: "all oracles evaluated".into(),
    });

    let spec_tol = cast::<T>(1e-8) * consts.l_g;
    let mut worst_low = T::infinity();
    let mut worst_high = T::neg_infinity();
    let mut lin_worst = 0f64;
    let mut sym_worst = 0f64;
    let mut transpose_worst = 0f64;
    let mut grad_fd_worst = 0f64;
    let mut hess_fd_worst = 0f64;
    let mut df_norm_worst = 0f64;
    let mut df_deterministic = true;
    let mut third_fd_worst = 0f64;
    let mut third_bound = 0f64;

    for (x, y) in &points {
        let hyy = prob.hess_yy(x, y);
        let hxy = prob.hess_xy(x, y);
        let hyx = prob.hess_yx(x, y);

        // Spectral envelope via Rayleigh quotients on random probes.
        for _ in 0..4 {
            let v = unit_vec::<T>(&mut rng, p);
            let rq = dot(&v, &hyy.apply(&v));
            worst_low = worst_low.min(rq);
            worst_high = worst_high.max(rq);
        }

        // Linearity: ||A(a u + b v) - a A u - b A v|| <= 1e-12 * scale.
        {
            let u = sample_vec::<T>(&mut rng, p, 1.0);
            let v = sample_vec::<T>(&mut rng, p, 1.0);
            let a: T = cast(rng.gen_range(-2.0..2.0f64));
            let b: T = cast(rng.gen_range(-2.0..2.0f64));
            let mut combo = scaled(&u, a);
            axpy(&mut combo, b, &v);
            let lhs = hyy.apply(&combo);
            let mut rhs = scaled(&hyy.apply(&u), a);
            axpy(&mut rhs, b, &hyy.apply(&v));
            let scale = to_f64(norm(&lhs)).max(1.0);
            lin_worst = lin_worst.max(to_f64(norm(&sub(&lhs, &rhs))) / scale);
        }

        // Symmetry of hess_yy and transpose consistency of hess_xy/hess_yx.
        {
            let u = unit_vec::<T>(&mut rng, p);
            let v = unit_vec::<T>(&mut rng, p);
            let asym = dot(&u, &hyy.apply(&v)) - dot(&v, &hyy.apply(&u));
            sym_worst = sym_worst.max(to_f64(asym.abs()));

            let a = unit_vec::<T>(&mut rng, n);
            let b = unit_vec::<T>(&mut rng, p);
            let mismatch = dot(&a, &hxy.apply(&b)) - dot(&b, &hyx.apply(&a));
            transpose_worst = transpose_worst.max(to_f64(mismatch.abs()));
        }

        // grad_y_g vs central differences of g_value.
        {
            let d = unit_vec::<T>(&mut rng, p);
            let t = cast::<T>(1e-6) * (T::one() + norm_pair(x, y));
            let mut yp = y.clone();
            axpy(&mut yp, t, &d);
            let mut ym = y.clone();
            axpy(&mut ym, -t, &d);
            let fd = (prob.g_value(x, &yp) - prob.g_value(x, &ym)) / (cast::<T>(2.0) * t);
            let analytic = dot(&prob.grad_y_g(x, y), &d);
            let rel = to_f64((fd - analytic).abs()) / to_f64(analytic.abs()).max(1.0);
            grad_fd_worst = grad_fd_worst.max(rel);
        }

        // Hessian blocks vs central differences of grad_y_g.
        {
            let t = cast::<T>(1e-5) * (T::one() + norm_pair(x, y));
            let d = unit_vec::<T>(&mut rng, p);
            let mut yp = y.clone();
            axpy(&mut yp, t, &d);
            let mut ym = y.clone();
            axpy(&mut ym, -t, &d);
            let fd = scaled(
                &sub(&prob.grad_y_g(x, &yp), &prob.grad_y_g(x, &ym)),
                T::one() / (cast::<T>(2.0) * t),
            );
            let analytic = hyy.apply(&d);
            let rel = to_f64(norm(&sub(&fd, &analytic))) / to_f64(norm(&analytic)).max(1.0);
            hess_fd_worst = hess_fd_worst.max(rel);

            let e = unit_vec::<T>(&mut rng, n);
            let mut xp = x.clone();
            axpy(&mut xp, t, &e);
            let mut xm = x.clone();
            axpy(&mut xm, -t, &e);
            let fd_x = scaled(
                &sub(&prob.grad_y_g(&xp, y), &prob.grad_y_g(&xm, y)),
                T::one() / (cast::<T>(2.0) * t),
            );
            let analytic_x = hyx.apply(&e);
            let rel_x = to_f64(norm(&sub(&fd_x, &analytic_x))) / to_f64(norm(&analytic_x)).max(1.0);
            hess_fd_worst = hess_fd_worst.max(rel_x);
        }

        // df_element: determinism and the m_f bound.
        {
            let (dx1, dy1) = prob.df_element(x, y);
            let (dx2, dy2) = prob.df_element(x, y);
            if dx1 != dx2 || dy1 != dy2 {
                df_deterministic = false;
            }
            df_norm_worst = df_norm_worst.max(to_f64(norm_pair(&dx1, &dy1)));
        }

        // Third-order operators vs forward differences of the Hessian blocks.
        if prob.has_third_order() {
            let d = unit_vec::<T>(&mut rng, p);
            let v = unit_vec::<T>(&mut rng, p);
            for &t_f in &[1e-3f64, 1e-4] {
                let t: T = cast(t_f);
                let mut yp = y.clone();
                axpy(&mut yp, t, &d);

                let fd_xyy = scaled(
                    &sub(&prob.hess_xy(x, &yp).apply(&v), &hxy.apply(&v)),
                    T::one() / t,
                );
                let an_xyy = prob
                    .third_xyy(x, y, &d)
                    .expect("has_third_order implies third_xyy")
                    .apply(&v);
                let err_xyy = to_f64(norm(&sub(&fd_xyy, &an_xyy)));

                let fd_yyy = scaled(
                    &sub(&prob.hess_yy(x, &yp).apply(&v), &hyy.apply(&v)),
                    T::one() / t,
                );
                let an_yyy = prob
                    .third_yyy(x, y, &d)
                    .expect("has_third_order implies third_yyy")
                    .apply(&v);
                let err_yyy = to_f64(norm(&sub(&fd_yyy, &an_yyy)));

                // The defect of a forward difference of a Q_g-Lipschitz
                // derivative is O(Q_g t); 10*Q_g*t covers it with margin,
                // plus a floating-point floor.
                let allowed = 10.0 * to_f64(consts.q_g) * t_f + 1e-12;
                third_bound = third_bound.max(allowed);
                third_fd_worst = third_fd_worst.max(err_xyy.max(err_yyy) - allowed);
            }
        }
    }

    let mu = to_f64(consts.mu);
    let lg = to_f64(consts.l_g);
    let tol = to_f64(spec_tol);
    report.push(ValidationCheck {
        name: "hess_yy_spectrum",
        passed: to_f64(worst_low) >= mu - tol && to_f64(worst_high) <= lg + tol,
        worst: to_f64(worst_low),
        bound: mu,
        detail: format!(
            "Rayleigh quotients in [{}, {}], required [{mu}, {lg}] with tol {tol:.3e}",
            to_f64(worst_low),
            to_f64(worst_high)
        ),
    });
    report.push(ValidationCheck {
        name: "operator_linearity",
        passed: lin_worst <= 1e-12,
        worst: lin_worst,
        bound: 1e-12,
        detail: "||A(au+bv) - aAu - bAv|| / max(1, ||A(au+bv)||)".into(),
    });
    report.push(ValidationCheck {
        name: "hess_yy_symmetry",
        passed: sym_worst <= 1e-10,
        worst: sym_worst,
        bound: 1e-10,
        detail: "|u' A v - v' A u| on unit probes".into(),
    });
    report.push(ValidationCheck {
        name: "hess_xy_transpose",
        passed: transpose_worst <= 1e-10,
        worst: transpose_worst,
        bound: 1e-10,
        detail: "|u' (hess_xy v) - v' (hess_yx u)| on unit probes".into(),
    });
    report.push(ValidationCheck {
        name: "grad_fd_consistency",
        passed: grad_fd_worst <= 1e-5,
        worst: grad_fd_worst,
        bound: 1e-5,
        detail: "grad_y_g vs central differences of g_value".into(),
    });
    report.push(ValidationCheck {
        name: "hessian_fd_consistency",
        passed: hess_fd_worst <= 1e-4,
        worst: hess_fd_worst,
        bound: 1e-4,
        detail: "Hessian blocks vs central differences of grad_y_g".into(),
    });
    report.push(ValidationCheck {
        name: "df_element_deterministic",
        passed: df_deterministic,
        worst: if df_deterministic { 0.0 } else { 1.0 },
        bound: 0.0,
        detail: "identical inputs must give identical elements".into(),
    });
    report.push(ValidationCheck {
        name: "df_element_norm",
        passed: df_norm_worst <= to_f64(consts.m_f) + 1e-12,
        worst: df_norm_worst,
        bound: to_f64(consts.m_f),
        detail: "||(d_x, d_y)|| <= m_f on sampled points".into(),
    });
    if prob.has_third_order() {
        report.push(ValidationCheck {
            name: "third_order_fd_consistency",
            passed: third_fd_worst <= 0.0,
            worst: third_fd_worst,
            bound: 0.0,
            detail: format!(
                "forward-difference defect minus allowance (<= {third_bound:.3e}) must be <= 0"
            ),
        });
    }

    report
}

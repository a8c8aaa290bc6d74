//! Solvers for nonconvex–strongly-convex bilevel optimization through an
//! explicit penalty reformulation.
//!
//! A bilevel problem minimizes an upper-level objective `f(x, y)` subject to
//! `y` solving a smooth, strongly convex lower-level problem `min_y g(x, y)`.
//! Instead of nesting an inner solver, this crate works with the unconstrained
//! penalty
//!
//! ```text
//! h(x, y) = f(x, A(x, y)) + (beta / 2) * ||grad_y g(x, y)||^2
//! ```
//!
//! where `A(x, y) = y - (hess_yy g)^{-1} grad_y g(x, y)` is a single Newton
//! step on the lower-level problem. Above an explicit penalty threshold,
//! stationary points of `h` coincide with stationary points of the bilevel
//! problem, so plain subgradient iterations on `h` solve it — including when
//! `f` is nonsmooth, in which case the upper-level derivative is an element
//! of a set-valued generalized derivative supplied by the problem.
//!
//! What lives where:
//!
//! - [`problem`] — the oracle interface a problem must expose
//!   ([`BilevelProblem`]) plus numerical validation of its contract.
//! - [`linalg`] — the matrix-free conjugate-gradient solver behind every
//!   inverse-Hessian application.
//! - [`field`] — evaluation of the Newton map, the penalty `h`, and the
//!   four generalized-derivative variants used as update directions.
//! - [`solver`] — the single-loop subgradient driver, stepsize/tolerance
//!   schedules, and presets mirroring known single-loop methods.
//! - [`diagnostics`] — numerical checks of the descent, contraction, and
//!   equivalence inequalities the solvers rely on.
//! - [`problems`] — built-in analytic problems with certified constants.
//!
//! All heavy math is generic over [`Scalar`] (`f32` or `f64`); the built-in
//! problems and the CLI use the `f64` aliases below.

// Validation guards are written as `!(x > 0)` on purpose: a NaN constant or
// stepsize must fail the check, which `x <= 0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod field;
pub mod linalg;
pub mod problem;
pub mod problems;
pub mod scalar;
pub mod solver;

pub use field::{FieldElement, FieldVariant, Iterate};
pub use linalg::CgReport;
pub use problem::{BilevelProblem, LinearOp, ProblemConstants};
pub use scalar::Scalar;
pub use solver::{Algorithm, RunResult, RunStatus, Schedules, SolverConfig, TraceRecord};

/// `f64` instantiations used by the built-in problems and the CLI.
pub type ProblemConstants64 = problem::ProblemConstants<f64>;
pub type CgReport64 = linalg::CgReport<f64>;
pub type FieldElement64 = field::FieldElement<f64>;
pub type Iterate64 = field::Iterate<f64>;
pub type Schedules64 = solver::Schedules<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type TraceRecord64 = solver::TraceRecord<f64>;
pub type RunResult64 = solver::RunResult<f64>;
pub type CheckReport64 = diagnostics::CheckReport<f64>;
pub type Preset64 = problems::Preset<f64>;

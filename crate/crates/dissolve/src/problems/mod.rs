//! Built-in analytic bilevel problems with exact constants, used by the
//! tests, the diagnostics battery, and the CLI.
//!
//! Three families, each with a smooth-quadratic or an l1 upper level:
//!
//! * `qll_*` — quadratic lower level `g = y'Ay/2 + x'By + c'y` with a fixed
//!   SPD `A`. The Hessian is constant (`q_g = 0`) and the lower-level
//!   solution map is affine and closed-form.
//! * `nqll_*` — non-quadratic strongly convex lower level built from
//!   `ln cosh` ridge terms, whose derivatives of every order are globally
//!   bounded with closed-form constants. Third-order oracles are analytic.
//! * `scalar_nonsmooth` — the one-dimensional hand-checkable problem
//!   `f = |y - 1|`, `g = (y - x)^2 / 2`.
//!
//! Nonsmooth upper levels are coordinatewise absolute values, so the
//! deterministic derivative-element oracle is a sign selection with
//! `sign(0) = -1`.

use serde::Serialize;

use crate::field;
use crate::problem::BilevelProblem;
use crate::scalar::{cast, Scalar};

pub(crate) mod dense;

mod corrupt;
mod nqll;
mod qll;
mod scalar_abs;

pub use corrupt::{FlippedThirdYyy, ScaledGrad, ZeroHessYy};
pub use nqll::build_nqll;
pub use qll::{build_qll, build_qll_from_parts, QllParts};
pub use scalar_abs::build_scalar_nonsmooth;

/// Sign with the deterministic tie-break `sign(0) = -1`.
///
/// Any fixed selection at a kink is a valid derivative element; fixing one
/// is what makes traces reproducible.
#[inline]
pub fn sign_neg<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// Which upper-level objective a preset family carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UpperKind {
    /// `f = ||x - x_ref||^2/2 + ||y - y_ref||^2/2` (smooth).
    Quadratic,
    /// `f = ||x - x_ref||_1 + ||y - y_ref||_1` (nonsmooth, `m_f = sqrt(n+p)`).
    L1,
}

/// How a preset evaluates the lower-level solution map.
pub(crate) enum YStarOracle<T> {
    /// `y*(x) = M x + m0` (quadratic lower level).
    Affine { m: Vec<T>, m0: Vec<T> },
    /// Damped Newton to residual `1e-12`.
    Newton,
}

/// A built-in problem plus its analytic data.
pub struct Preset<T: Scalar> {
    pub name: String,
    pub problem: Box<dyn BilevelProblem<T> + Send + Sync>,
    /// Whether `f` is smooth on the sampled region (gates the
    /// finite-difference gradient check).
    pub f_smooth: bool,
    /// Radius scaling the `[-3, 3]` sampling cell used by diagnostics.
    pub sample_radius: T,
    /// Known infimum of the reduced objective `f(x, y*(x))`, when available.
    pub phi_inf: Option<T>,
    /// A point where the reduced objective attains `phi_inf` *and* the
    /// deterministic element oracle certifies stationarity (declared only
    /// when the minimizer is a smooth point of `f`).
    pub minimizer: Option<(Vec<T>, Vec<T>)>,
    pub(crate) y_star: YStarOracle<T>,
}

impl<T: Scalar> Preset<T> {
    /// Lower-level minimizer `y*(x)`, by closed form when the lower level is
    /// quadratic and by damped Newton (residual `1e-12`) otherwise.
    pub fn y_star(&self, x: &[T]) -> Vec<T> {
        match &self.y_star {
            YStarOracle::Affine { m, m0 } => {
                let p = m0.len();
                let n = x.len();
                let mut out = dense::matvec(p, n, m, x);
                for (o, &b) in out.iter_mut().zip(m0) {
                    *o = *o + b;
                }
                out
            }
            YStarOracle::Newton => {
                let y0 = vec![T::zero(); self.problem.dim_y()];
                let sol = field::lower_level_minimizer(
                    self.problem.as_ref(),
                    x,
                    &y0,
                    cast(1e-12),
                    100,
                )
                .expect("built-in lower level is strongly convex; Newton must converge");
                sol.y
            }
        }
    }
}

/// Errors from preset construction.
#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{name}` requires {requirement}, got n={n}, p={p}")]
    BadDimensions {
        name: String,
        requirement: &'static str,
        n: usize,
        p: usize,
    },
}

/// Builds a preset by registry name.
///
/// Plain presets: `qll_smooth`, `qll_l1`, `nqll_smooth`, `nqll_l1`,
/// `scalar_nonsmooth`. Deliberately broken fixtures for negative controls:
/// `qll_smooth_bad_grad`, `qll_smooth_zero_hess`, `nqll_smooth_bad_third`.
pub fn build_preset<T: Scalar>(
    name: &str,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<Preset<T>, BuildError> {
    match name {
        "qll_smooth" => build_qll(n, p, seed, UpperKind::Quadratic),
        "qll_l1" => build_qll(n, p, seed, UpperKind::L1),
        "nqll_smooth" => Ok(build_nqll(n, p, seed, UpperKind::Quadratic)),
        "nqll_l1" => Ok(build_nqll(n, p, seed, UpperKind::L1)),
        "scalar_nonsmooth" => {
            if n != 1 || p != 1 {
                return Err(BuildError::BadDimensions {
                    name: name.into(),
                    requirement: "n = p = 1",
                    n,
                    p,
                });
            }
            Ok(build_scalar_nonsmooth())
        }
        "qll_smooth_bad_grad" => {
            let mut preset = build_qll(n, p, seed, UpperKind::Quadratic)?;
            preset.name = name.into();
            preset.problem = Box::new(ScaledGrad::new(preset.problem, cast(2.0)));
            Ok(preset)
        }
        "qll_smooth_zero_hess" => {
            let mut preset = build_qll(n, p, seed, UpperKind::Quadratic)?;
            preset.name = name.into();
            preset.problem = Box::new(ZeroHessYy::new(preset.problem));
            Ok(preset)
        }
        "nqll_smooth_bad_third" => {
            let mut preset = build_nqll(n, p, seed, UpperKind::Quadratic);
            preset.name = name.into();
            preset.problem = Box::new(FlippedThirdYyy::new(preset.problem));
            Ok(preset)
        }
        other => Err(BuildError::UnknownPreset(other.into())),
    }
}

/// Names accepted by [`build_preset`], for CLI help and error messages.
pub const PRESET_NAMES: &[&str] = &[
    "qll_smooth",
    "qll_l1",
    "nqll_smooth",
    "nqll_l1",
    "scalar_nonsmooth",
    "qll_smooth_bad_grad",
    "qll_smooth_zero_hess",
    "nqll_smooth_bad_third",
];

/// Shared upper-level objective used by the QLL and NQLL families.
pub(crate) struct UpperLevel<T> {
    pub kind: UpperKind,
    pub x_ref: Vec<T>,
    pub y_ref: Vec<T>,
}

impl<T: Scalar> UpperLevel<T> {
    pub fn value(&self, x: &[T], y: &[T]) -> T {
        match self.kind {
            UpperKind::Quadratic => {
                let half = cast::<T>(0.5);
                let sx: T = x
                    .iter()
                    .zip(&self.x_ref)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                let sy: T = y
                    .iter()
                    .zip(&self.y_ref)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                half * (sx + sy)
            }
            UpperKind::L1 => {
                let sx: T = x.iter().zip(&self.x_ref).map(|(&a, &b)| (a - b).abs()).sum();
                let sy: T = y.iter().zip(&self.y_ref).map(|(&a, &b)| (a - b).abs()).sum();
                sx + sy
            }
        }
    }

    pub fn element(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        match self.kind {
            UpperKind::Quadratic => (
                x.iter().zip(&self.x_ref).map(|(&a, &b)| a - b).collect(),
                y.iter().zip(&self.y_ref).map(|(&a, &b)| a - b).collect(),
            ),
            UpperKind::L1 => (
                x.iter().zip(&self.x_ref).map(|(&a, &b)| sign_neg(a - b)).collect(),
                y.iter().zip(&self.y_ref).map(|(&a, &b)| sign_neg(a - b)).collect(),
            ),
        }
    }
}

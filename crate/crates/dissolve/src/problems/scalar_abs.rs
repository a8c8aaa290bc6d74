//! The hand-checkable scalar problem `f = |y - 1|`, `g = (y - x)^2 / 2`.
//!
//! Everything is evaluable by hand: `y*(x) = x`, the penalty objective is
//! `h(x, y) = |x - 1| + (beta/2)(y - x)^2`, the reduced objective is
//! `|x - 1|` with infimum 0 at `x = 1`. The derivative element at the kink
//! uses `sign(0) = -1`.

use crate::problem::{BilevelProblem, DenseOp, LinearOp, ProblemConstants};
use crate::scalar::{cast, Scalar};

use super::{sign_neg, Preset, YStarOracle};

pub(crate) struct ScalarAbsProblem<T> {
    constants: ProblemConstants<T>,
}

impl<T: Scalar> BilevelProblem<T> for ScalarAbsProblem<T> {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn constants(&self) -> ProblemConstants<T> {
        self.constants
    }

    fn f_value(&self, _x: &[T], y: &[T]) -> T {
        (y[0] - T::one()).abs()
    }
    fn df_element(&self, _x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        (vec![T::zero()], vec![sign_neg(y[0] - T::one())])
    }

    fn g_value(&self, x: &[T], y: &[T]) -> T {
        let d = y[0] - x[0];
        cast::<T>(0.5) * d * d
    }
    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T> {
        vec![y[0] - x[0]]
    }

    fn hess_yy<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(DenseOp::new(1, 1, vec![T::one()]))
    }
    fn hess_xy<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(DenseOp::new(1, 1, vec![-T::one()]))
    }
    fn hess_yx<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(DenseOp::new(1, 1, vec![-T::one()]))
    }

    fn third_xyy<'a>(&'a self, _x: &[T], _y: &[T], _d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        Some(Box::new(DenseOp::zero(1, 1)))
    }
    fn third_yyy<'a>(&'a self, _x: &[T], _y: &[T], _d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        Some(Box::new(DenseOp::zero(1, 1)))
    }
    fn has_third_order(&self) -> bool {
        true
    }
}

/// Builds the scalar hand-checkable preset.
///
/// Constants are exact: `mu = 1`, the full Hessian of `g` is the constant
/// matrix `[[1, -1], [-1, 1]]` with norm 2, `q_g = 0`, and the derivative
/// elements of `f` have norm 1.
pub fn build_scalar_nonsmooth<T: Scalar>() -> Preset<T> {
    let constants = ProblemConstants {
        mu: T::one(),
        l_g: cast(2.0),
        q_g: T::zero(),
        m_f: T::one(),
    };
    Preset {
        name: "scalar_nonsmooth".to_string(),
        problem: Box::new(ScalarAbsProblem { constants }),
        f_smooth: false,
        sample_radius: T::one(),
        phi_inf: Some(T::zero()),
        // The reduced objective |x - 1| attains its infimum only at the
        // kink, where the deterministic selection is not stationary.
        minimizer: None,
        y_star: YStarOracle::Affine {
            m: vec![T::one()],
            m0: vec![T::zero()],
        },
    }
}

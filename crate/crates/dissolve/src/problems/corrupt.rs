//! Deliberately broken oracle wrappers, used as negative controls: each one
//! must flip the corresponding validation or diagnostic check to fail.

use crate::problem::{BilevelProblem, DenseOp, FnOp, LinearOp, ProblemConstants};
use crate::scalar::Scalar;

/// Scales `grad_y_g` by a constant, breaking its finite-difference
/// consistency with `g_value` (and everything downstream of the gradient).
pub struct ScaledGrad<T: Scalar> {
    inner: Box<dyn BilevelProblem<T> + Send + Sync>,
    factor: T,
}

impl<T: Scalar> ScaledGrad<T> {
    pub fn new(inner: Box<dyn BilevelProblem<T> + Send + Sync>, factor: T) -> Self {
        Self { inner, factor }
    }
}

impl<T: Scalar> BilevelProblem<T> for ScaledGrad<T> {
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }
    fn constants(&self) -> ProblemConstants<T> {
        self.inner.constants()
    }
    fn f_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.f_value(x, y)
    }
    fn df_element(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        self.inner.df_element(x, y)
    }
    fn g_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.g_value(x, y)
    }
    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T> {
        let mut g = self.inner.grad_y_g(x, y);
        for v in g.iter_mut() {
            *v = *v * self.factor;
        }
        g
    }
    fn hess_yy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_yy(x, y)
    }
    fn hess_xy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_xy(x, y)
    }
    fn hess_yx<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_yx(x, y)
    }
    fn third_xyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        self.inner.third_xyy(x, y, d)
    }
    fn third_yyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        self.inner.third_yyy(x, y, d)
    }
    fn has_third_order(&self) -> bool {
        self.inner.has_third_order()
    }
}

/// Replaces `hess_yy` with the zero operator, violating the spectral lower
/// bound `mu I`.
pub struct ZeroHessYy<T: Scalar> {
    inner: Box<dyn BilevelProblem<T> + Send + Sync>,
}

impl<T: Scalar> ZeroHessYy<T> {
    pub fn new(inner: Box<dyn BilevelProblem<T> + Send + Sync>) -> Self {
        Self { inner }
    }
}

impl<T: Scalar> BilevelProblem<T> for ZeroHessYy<T> {
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }
    fn constants(&self) -> ProblemConstants<T> {
        self.inner.constants()
    }
    fn f_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.f_value(x, y)
    }
    fn df_element(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        self.inner.df_element(x, y)
    }
    fn g_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.g_value(x, y)
    }
    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.inner.grad_y_g(x, y)
    }
    fn hess_yy<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(DenseOp::zero(self.inner.dim_y(), self.inner.dim_y()))
    }
    fn hess_xy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_xy(x, y)
    }
    fn hess_yx<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_yx(x, y)
    }
    fn third_xyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        self.inner.third_xyy(x, y, d)
    }
    fn third_yyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        self.inner.third_yyy(x, y, d)
    }
    fn has_third_order(&self) -> bool {
        self.inner.has_third_order()
    }
}

/// Flips the sign of `third_yyy`, corrupting the `y`-block of the exact
/// field element; the finite-difference gradient check must catch it.
pub struct FlippedThirdYyy<T: Scalar> {
    inner: Box<dyn BilevelProblem<T> + Send + Sync>,
}

impl<T: Scalar> FlippedThirdYyy<T> {
    pub fn new(inner: Box<dyn BilevelProblem<T> + Send + Sync>) -> Self {
        Self { inner }
    }
}

impl<T: Scalar> BilevelProblem<T> for FlippedThirdYyy<T> {
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }
    fn constants(&self) -> ProblemConstants<T> {
        self.inner.constants()
    }
    fn f_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.f_value(x, y)
    }
    fn df_element(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        self.inner.df_element(x, y)
    }
    fn g_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.g_value(x, y)
    }
    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.inner.grad_y_g(x, y)
    }
    fn hess_yy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_yy(x, y)
    }
    fn hess_xy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_xy(x, y)
    }
    fn hess_yx<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        self.inner.hess_yx(x, y)
    }
    fn third_xyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        self.inner.third_xyy(x, y, d)
    }
    fn third_yyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        let dim = self.inner.dim_y();
        self.inner.third_yyy(x, y, d).map(|op| {
            Box::new(FnOp::new(dim, dim, move |v: &[T]| {
                op.apply(v).into_iter().map(|u| -u).collect()
            })) as Box<dyn LinearOp<T> + 'a>
        })
    }
    fn has_third_order(&self) -> bool {
        self.inner.has_third_order()
    }
}

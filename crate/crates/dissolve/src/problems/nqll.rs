//! Non-quadratic strongly convex lower level:
//!
//! ```text
//! g(x, y) = mu ||y||^2 / 2 + sum_i ln cosh(a_i'y + b_i'x)
//! ```
//!
//! `ln cosh` ridges are used because every derivative is globally bounded
//! with closed-form constants — `|lncosh''| <= 1` and
//! `|lncosh'''| <= 4/(3 sqrt(3))` — which makes the Hessian-Lipschitz
//! constant certifiable. Polynomial ridges would not have a global one.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field;
use crate::problem::{BilevelProblem, FnOp, LinearOp, ProblemConstants};
use crate::scalar::{cast, Scalar};

use super::{Preset, UpperKind, UpperLevel, YStarOracle};

/// Overflow-safe `ln cosh`.
fn ln_cosh<T: Scalar>(s: T) -> T {
    let a = s.abs();
    a + (-(a + a)).exp().ln_1p() - cast::<T>(std::f64::consts::LN_2)
}

/// Overflow-safe `sech^2(s) = 4 e^{-2|s|} / (1 + e^{-2|s|})^2`.
fn sech2<T: Scalar>(s: T) -> T {
    let u = (-(s.abs() + s.abs())).exp();
    let onepu = T::one() + u;
    cast::<T>(4.0) * u / (onepu * onepu)
}

pub(crate) struct NqllProblem<T> {
    n: usize,
    p: usize,
    mu: T,
    /// Ridge directions in `y` (`terms x p`) and `x` (`terms x n`).
    a_vecs: Vec<Vec<T>>,
    b_vecs: Vec<Vec<T>>,
    upper: UpperLevel<T>,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> NqllProblem<T> {
    fn ridge_args(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.a_vecs
            .iter()
            .zip(&self.b_vecs)
            .map(|(a, b)| {
                let ay: T = a.iter().zip(y).map(|(&u, &v)| u * v).sum();
                let bx: T = b.iter().zip(x).map(|(&u, &v)| u * v).sum();
                ay + bx
            })
            .collect()
    }
}

impl<T: Scalar> BilevelProblem<T> for NqllProblem<T> {
    fn dim_x(&self) -> usize {
        self.n
    }
    fn dim_y(&self) -> usize {
        self.p
    }
    fn constants(&self) -> ProblemConstants<T> {
        self.constants
    }

    fn f_value(&self, x: &[T], y: &[T]) -> T {
        self.upper.value(x, y)
    }
    fn df_element(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        self.upper.element(x, y)
    }

    fn g_value(&self, x: &[T], y: &[T]) -> T {
        let half = cast::<T>(0.5);
        let quad: T = y.iter().map(|&v| v * v).sum();
        let ridges: T = self.ridge_args(x, y).into_iter().map(ln_cosh).sum();
        half * self.mu * quad + ridges
    }

    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T> {
        let args = self.ridge_args(x, y);
        let mut g: Vec<T> = y.iter().map(|&v| self.mu * v).collect();
        for (a, &s) in self.a_vecs.iter().zip(&args) {
            let t = s.tanh();
            for (gi, &ai) in g.iter_mut().zip(a) {
                *gi = *gi + t * ai;
            }
        }
        g
    }

    fn hess_yy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        let coefs: Vec<T> = self.ridge_args(x, y).into_iter().map(sech2).collect();
        Box::new(FnOp::new(self.p, self.p, move |v: &[T]| {
            let mut out: Vec<T> = v.iter().map(|&vi| self.mu * vi).collect();
            for (a, &c) in self.a_vecs.iter().zip(&coefs) {
                let av: T = a.iter().zip(v).map(|(&u, &w)| u * w).sum();
                let cav = c * av;
                for (o, &ai) in out.iter_mut().zip(a) {
                    *o = *o + cav * ai;
                }
            }
            out
        }))
    }

    fn hess_xy<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        let coefs: Vec<T> = self.ridge_args(x, y).into_iter().map(sech2).collect();
        Box::new(FnOp::new(self.p, self.n, move |v: &[T]| {
            let mut out = vec![T::zero(); self.n];
            for ((a, b), &c) in self.a_vecs.iter().zip(&self.b_vecs).zip(&coefs) {
                let av: T = a.iter().zip(v).map(|(&u, &w)| u * w).sum();
                let cav = c * av;
                for (o, &bi) in out.iter_mut().zip(b) {
                    *o = *o + cav * bi;
                }
            }
            out
        }))
    }

    fn hess_yx<'a>(&'a self, x: &[T], y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        let coefs: Vec<T> = self.ridge_args(x, y).into_iter().map(sech2).collect();
        Box::new(FnOp::new(self.n, self.p, move |u: &[T]| {
            let mut out = vec![T::zero(); self.p];
            for ((a, b), &c) in self.a_vecs.iter().zip(&self.b_vecs).zip(&coefs) {
                let bu: T = b.iter().zip(u).map(|(&w, &z)| w * z).sum();
                let cbu = c * bu;
                for (o, &ai) in out.iter_mut().zip(a) {
                    *o = *o + cbu * ai;
                }
            }
            out
        }))
    }

    fn third_xyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        // d/ds sech^2(s) = -2 tanh(s) sech^2(s), direction a_i'd per ridge.
        let kappa: Vec<T> = self
            .ridge_args(x, y)
            .into_iter()
            .zip(self.a_vecs.iter())
            .map(|(s, a)| {
                let ad: T = a.iter().zip(d).map(|(&u, &w)| u * w).sum();
                -cast::<T>(2.0) * s.tanh() * sech2(s) * ad
            })
            .collect();
        Some(Box::new(FnOp::new(self.p, self.n, move |v: &[T]| {
            let mut out = vec![T::zero(); self.n];
            for ((a, b), &k) in self.a_vecs.iter().zip(&self.b_vecs).zip(&kappa) {
                let av: T = a.iter().zip(v).map(|(&u, &w)| u * w).sum();
                let kav = k * av;
                for (o, &bi) in out.iter_mut().zip(b) {
                    *o = *o + kav * bi;
                }
            }
            out
        })))
    }

    fn third_yyy<'a>(&'a self, x: &[T], y: &[T], d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        let kappa: Vec<T> = self
            .ridge_args(x, y)
            .into_iter()
            .zip(self.a_vecs.iter())
            .map(|(s, a)| {
                let ad: T = a.iter().zip(d).map(|(&u, &w)| u * w).sum();
                -cast::<T>(2.0) * s.tanh() * sech2(s) * ad
            })
            .collect();
        Some(Box::new(FnOp::new(self.p, self.p, move |v: &[T]| {
            let mut out = vec![T::zero(); self.p];
            for (a, &k) in self.a_vecs.iter().zip(&kappa) {
                let av: T = a.iter().zip(v).map(|(&u, &w)| u * w).sum();
                let kav = k * av;
                for (o, &ai) in out.iter_mut().zip(a) {
                    *o = *o + kav * ai;
                }
            }
            out
        })))
    }

    fn has_third_order(&self) -> bool {
        true
    }
}

/// Builds a seeded NQLL preset with `p` ridge terms.
///
/// Ridge norms are scaled so that `sum_i (||a_i||^2 + ||b_i||^2) = 1`,
/// giving `l_g = mu + 1` exactly as a certified bound. The upper-level
/// reference `y_ref` is placed at `y*(x_ref)`, so the reduced objective is
/// nonnegative with infimum exactly 0 at `x_ref`.
pub fn build_nqll<T: Scalar>(n: usize, p: usize, seed: u64, kind: UpperKind) -> Preset<T> {
    assert!(n >= 1 && p >= 1, "dimensions must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e51_4c00);
    let terms = p;
    let mu = T::one();

    // Equal per-term norms s with 2 * terms * s^2 = 1.
    let s = cast::<T>(1.0 / (2.0 * terms as f64).sqrt());
    let sample_dir = |dim: usize, rng: &mut ChaCha8Rng| -> Vec<T> {
        loop {
            let raw: Vec<T> = (0..dim).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect();
            let nrm: T = raw.iter().map(|&v| v * v).sum::<T>().sqrt();
            if nrm > cast(1e-3) {
                return raw.iter().map(|&v| v * s / nrm).collect();
            }
        }
    };
    let a_vecs: Vec<Vec<T>> = (0..terms).map(|_| sample_dir(p, &mut rng)).collect();
    let b_vecs: Vec<Vec<T>> = (0..terms).map(|_| sample_dir(n, &mut rng)).collect();

    let norm_sq = |v: &[T]| -> T { v.iter().map(|&u| u * u).sum() };
    let l_g = mu
        + a_vecs
            .iter()
            .zip(&b_vecs)
            .map(|(a, b)| norm_sq(a) + norm_sq(b))
            .sum::<T>();

    // |lncosh'''| <= 4/(3 sqrt(3)); each ridge perturbs a Hessian block by
    // at most that times ||a_i|| * max(||a_i||, ||b_i||) * ||c_i|| per unit
    // step in (x, y).
    let third_max = cast::<T>(4.0 / (3.0 * 3.0f64.sqrt()));
    let q_g = third_max
        * a_vecs
            .iter()
            .zip(&b_vecs)
            .map(|(a, b)| {
                let na = norm_sq(a).sqrt();
                let nb = norm_sq(b).sqrt();
                let nc = (norm_sq(a) + norm_sq(b)).sqrt();
                na * na.max(nb) * nc
            })
            .sum::<T>();

    let x_ref: Vec<T> = (0..n).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect();

    let m_f = match kind {
        UpperKind::L1 => cast::<T>(((n + p) as f64).sqrt()),
        UpperKind::Quadratic => cast::<T>(25.0 * ((n + p) as f64).sqrt()),
    };

    let constants = ProblemConstants { mu, l_g, q_g, m_f };

    // Two-stage build: the lower level is needed to place y_ref = y*(x_ref).
    let mut problem = NqllProblem {
        n,
        p,
        mu,
        a_vecs,
        b_vecs,
        upper: UpperLevel {
            kind,
            x_ref: x_ref.clone(),
            y_ref: vec![T::zero(); p],
        },
        constants,
    };
    let y0 = vec![T::zero(); p];
    let sol = field::lower_level_minimizer(&problem, &x_ref, &y0, cast(1e-13), 100)
        .expect("strongly convex lower level; damped Newton must converge");
    let y_ref = sol.y;
    problem.upper.y_ref = y_ref.clone();

    let minimizer = match kind {
        UpperKind::Quadratic => Some((x_ref, y_ref)),
        // The l1 minimizer sits at a kink, where the deterministic sign
        // selection does not certify stationarity; only the infimum is
        // declared.
        UpperKind::L1 => None,
    };

    Preset {
        name: match kind {
            UpperKind::Quadratic => "nqll_smooth",
            UpperKind::L1 => "nqll_l1",
        }
        .to_string(),
        problem: Box::new(problem),
        f_smooth: kind == UpperKind::Quadratic,
        sample_radius: T::one(),
        phi_inf: Some(T::zero()),
        minimizer,
        y_star: YStarOracle::Newton,
    }
}

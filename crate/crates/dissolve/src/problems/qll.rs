//! Quadratic lower level: `g(x, y) = y'Ay/2 + x'By + c'y` with a fixed SPD
//! `A`, so the Hessian blocks are constant (`q_g = 0`) and the lower-level
//! solution `y*(x) = -A^{-1}(B'x + c)` is affine.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::problem::{BilevelProblem, DenseOp, FnOp, LinearOp, ProblemConstants};
use crate::scalar::{cast, Scalar};

use super::dense::{gauss_solve, matvec, matvec_t, random_orthogonal, spectral_assemble};
use super::{BuildError, Preset, UpperKind, UpperLevel, YStarOracle};

pub(crate) struct QllProblem<T> {
    n: usize,
    p: usize,
    /// `p x p` SPD, row-major.
    a: Vec<T>,
    /// `n x p`, row-major.
    b: Vec<T>,
    c: Vec<T>,
    upper: UpperLevel<T>,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> BilevelProblem<T> for QllProblem<T> {
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
        let ay = matvec(self.p, self.p, &self.a, y);
        let by = matvec(self.n, self.p, &self.b, y);
        let half = cast::<T>(0.5);
        let yay: T = y.iter().zip(&ay).map(|(&u, &v)| u * v).sum();
        let xby: T = x.iter().zip(&by).map(|(&u, &v)| u * v).sum();
        let cy: T = self.c.iter().zip(y).map(|(&u, &v)| u * v).sum();
        half * yay + xby + cy
    }

    fn grad_y_g(&self, x: &[T], y: &[T]) -> Vec<T> {
        let mut g = matvec(self.p, self.p, &self.a, y);
        let btx = matvec_t(self.n, self.p, &self.b, x);
        for ((gi, &bi), &ci) in g.iter_mut().zip(&btx).zip(&self.c) {
            *gi = *gi + bi + ci;
        }
        g
    }

    fn hess_yy<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(FnOp::new(self.p, self.p, move |v: &[T]| {
            matvec(self.p, self.p, &self.a, v)
        }))
    }
    fn hess_xy<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(FnOp::new(self.p, self.n, move |v: &[T]| {
            matvec(self.n, self.p, &self.b, v)
        }))
    }
    fn hess_yx<'a>(&'a self, _x: &[T], _y: &[T]) -> Box<dyn LinearOp<T> + 'a> {
        Box::new(FnOp::new(self.n, self.p, move |u: &[T]| {
            matvec_t(self.n, self.p, &self.b, u)
        }))
    }

    fn third_xyy<'a>(&'a self, _x: &[T], _y: &[T], _d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        Some(Box::new(DenseOp::zero(self.n, self.p)))
    }
    fn third_yyy<'a>(&'a self, _x: &[T], _y: &[T], _d: &[T]) -> Option<Box<dyn LinearOp<T> + 'a>> {
        Some(Box::new(DenseOp::zero(self.p, self.p)))
    }
    fn has_third_order(&self) -> bool {
        true
    }
}

/// Everything needed to assemble a QLL preset from explicit matrices.
///
/// `mu` and `a_norm` must be the exact extreme eigenvalues of `a` (or a
/// valid lower/upper bound pair); `b_norm` any upper bound on the spectral
/// norm of `b`. `l_g = a_norm + b_norm` then bounds the full-gradient
/// Lipschitz constant.
pub struct QllParts<T> {
    pub n: usize,
    pub p: usize,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub mu: T,
    pub a_norm: T,
    pub b_norm: T,
    pub kind: UpperKind,
    pub x_ref: Vec<T>,
    pub y_ref: Vec<T>,
}

/// Assembles a QLL preset from explicit parts; mainly for hand-built test
/// fixtures. [`build_qll`] is the seeded front end.
pub fn build_qll_from_parts<T: Scalar>(parts: QllParts<T>) -> Preset<T> {
    let l_g = parts.a_norm + parts.b_norm;
    assemble(parts, l_g, None)
}

/// Builds a seeded QLL preset.
///
/// The SPD block `A` has prescribed spectrum `[1, 2]` behind a random
/// orthogonal factor, so `mu = 1` exactly. With the quadratic upper level
/// the coupling `B` is a small random matrix; with the l1 upper level the
/// coupling is `B = -A` (requires `n = p`), which makes `y*(x) = x` and the
/// reduced objective `||x - x_ref||_1 + ||x - y_ref||_1`, whose minimizing
/// set is the componentwise box between the two reference points — flat, so
/// the deterministic sign oracle certifies stationarity in its interior.
pub fn build_qll<T: Scalar>(
    n: usize,
    p: usize,
    seed: u64,
    kind: UpperKind,
) -> Result<Preset<T>, BuildError> {
    assert!(n >= 1 && p >= 1, "dimensions must be >= 1");
    if kind == UpperKind::L1 && n != p {
        return Err(BuildError::BadDimensions {
            name: "qll_l1".into(),
            requirement: "n = p (coupling B = -A)",
            n,
            p,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x514c_4c00);

    let mu = T::one();
    let a_norm = cast::<T>(2.0);
    let spectrum: Vec<T> = if p == 1 {
        vec![mu]
    } else {
        (0..p)
            .map(|i| mu + (a_norm - mu) * cast::<T>(i as f64 / (p - 1) as f64))
            .collect()
    };
    let q = random_orthogonal::<T>(p, &mut rng);
    let a = spectral_assemble(p, &q, &spectrum);
    let a_norm = if p == 1 { mu } else { a_norm };

    let x_ref: Vec<T> = (0..n).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect();

    match kind {
        UpperKind::Quadratic => {
            let raw: Vec<T> = (0..n * p).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect();
            let fro: T = raw.iter().map(|&v| v * v).sum::<T>().sqrt();
            let b_norm = cast::<T>(0.3);
            let b: Vec<T> = raw.iter().map(|&v| v * b_norm / fro).collect();
            let c: Vec<T> = (0..p).map(|_| cast(rng.gen_range(-0.5..0.5f64))).collect();
            let y_ref: Vec<T> = (0..p).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect();
            let parts = QllParts {
                n,
                p,
                a,
                b,
                c,
                mu,
                a_norm,
                b_norm,
                kind,
                x_ref,
                y_ref,
            };
            Ok(build_qll_from_parts(parts))
        }
        UpperKind::L1 => {
            let b: Vec<T> = a.iter().map(|&v| -v).collect();
            let c = vec![T::zero(); p];
            // Reference points straddle so the flat box has width >= 0.5 in
            // every coordinate.
            let y_ref: Vec<T> = x_ref
                .iter()
                .map(|&xi| xi + cast::<T>(0.5) + cast::<T>(0.5) * cast::<T>(rng.gen_range(0.0..1.0f64)))
                .collect();
            // Full Hessian [[0, -A], [-A, A]] block-diagonalizes over the
            // eigenbasis of A into 2x2 blocks [[0, -l], [-l, l]]; spectral
            // radius l(1+sqrt(5))/2.
            let l_g = a_norm * (T::one() + cast::<T>(5.0).sqrt()) / cast::<T>(2.0);
            let parts = QllParts {
                n,
                p,
                a,
                b,
                c,
                mu,
                a_norm,
                b_norm: a_norm,
                kind,
                x_ref,
                y_ref,
            };
            Ok(assemble(parts, l_g, Some("qll_l1".to_string())))
        }
    }
}

fn assemble<T: Scalar>(parts: QllParts<T>, l_g: T, name: Option<String>) -> Preset<T> {
    let QllParts {
        n,
        p,
        a,
        b,
        c,
        mu,
        a_norm: _,
        b_norm: _,
        kind,
        x_ref,
        y_ref,
    } = parts;

    // The l1 analytic data below needs the coupling B = -A, which makes the
    // solution map exactly the identity.
    let identity_coupling = kind == UpperKind::L1
        && n == p
        && b.iter().zip(&a).all(|(&bi, &ai)| bi == -ai)
        && c.iter().all(|&ci| ci == T::zero());

    // y*(x) = M x + m0 with A M = -B', A m0 = -c.
    let (m, m0) = if identity_coupling {
        let mut m = vec![T::zero(); p * n];
        for i in 0..p.min(n) {
            m[i * n + i] = T::one();
        }
        (m, vec![T::zero(); p])
    } else {
        let mut m = vec![T::zero(); p * n];
        for j in 0..n {
            let rhs: Vec<T> = (0..p).map(|i| -b[j * p + i]).collect();
            let col = gauss_solve(p, &a, &rhs);
            for i in 0..p {
                m[i * n + j] = col[i];
            }
        }
        let m0 = gauss_solve(p, &a, &c.iter().map(|&v| -v).collect::<Vec<_>>());
        (m, m0)
    };

    let refs_norm: T = x_ref
        .iter()
        .chain(&y_ref)
        .map(|&v| v * v)
        .sum::<T>()
        .sqrt();
    let m_f = match kind {
        // Exact global bound: every coordinate contributes a sign.
        UpperKind::L1 => cast::<T>(((n + p) as f64).sqrt()),
        // The quadratic upper level has an unbounded gradient globally; this
        // bound is certified on the region the library actually visits
        // (validation cell of radius 10, diagnostic cells, and the affine
        // probe points they induce).
        UpperKind::Quadratic => cast::<T>(25.0 * ((n + p) as f64).sqrt()) + refs_norm,
    };

    let constants = ProblemConstants {
        mu,
        l_g,
        q_g: T::zero(),
        m_f,
    };

    let (phi_inf, minimizer) = match kind {
        UpperKind::Quadratic => {
            // x* minimizes ||x - x_ref||^2/2 + ||Mx + m0 - y_ref||^2/2:
            // (I + M'M) x* = x_ref + M'(y_ref - m0).
            let mut lhs = vec![T::zero(); n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = if i == j { T::one() } else { T::zero() };
                    for k in 0..p {
                        acc = acc + m[k * n + i] * m[k * n + j];
                    }
                    lhs[i * n + j] = acc;
                }
            }
            let resid: Vec<T> = y_ref.iter().zip(&m0).map(|(&a, &b)| a - b).collect();
            let mtr = matvec_t(p, n, &m, &resid);
            let rhs: Vec<T> = x_ref.iter().zip(&mtr).map(|(&a, &b)| a + b).collect();
            let x_star = gauss_solve(n, &lhs, &rhs);
            let mut y_star_vec = matvec(p, n, &m, &x_star);
            for (v, &b0) in y_star_vec.iter_mut().zip(&m0) {
                *v = *v + b0;
            }
            let upper = UpperLevel {
                kind,
                x_ref: x_ref.clone(),
                y_ref: y_ref.clone(),
            };
            let phi = upper.value(&x_star, &y_star_vec);
            (Some(phi), Some((x_star, y_star_vec)))
        }
        UpperKind::L1 if identity_coupling => {
            // Reduced objective ||x - x_ref||_1 + ||x - y_ref||_1; its
            // infimum is the l1 distance between the references, attained on
            // the box between them. The midpoint is a smooth interior point.
            let phi: T = x_ref.iter().zip(&y_ref).map(|(&a, &b)| (a - b).abs()).sum();
            let x_mid: Vec<T> = x_ref
                .iter()
                .zip(&y_ref)
                .map(|(&a, &b)| (a + b) * cast::<T>(0.5))
                .collect();
            let y_mid = x_mid.clone();
            (Some(phi), Some((x_mid, y_mid)))
        }
        UpperKind::L1 => (None, None),
    };

    let upper = UpperLevel { kind, x_ref, y_ref };
    let problem = QllProblem {
        n,
        p,
        a,
        b,
        c,
        upper,
        constants,
    };

    Preset {
        name: name.unwrap_or_else(|| {
            match kind {
                UpperKind::Quadratic => "qll_smooth",
                UpperKind::L1 => "qll_l1",
            }
            .to_string()
        }),
        problem: Box::new(problem),
        f_smooth: kind == UpperKind::Quadratic,
        sample_radius: T::one(),
        phi_inf,
        minimizer,
        y_star: YStarOracle::Affine { m, m0 },
    }
}

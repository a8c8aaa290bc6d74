//! Shared test oracles: dense factorization-based routes kept independent
//! of the library's matrix-free paths.

#![allow(dead_code)]

use dissolve::problem::{BilevelProblem, LinearOp};

/// Materializes an operator into a dense row-major matrix by applying it to
/// basis vectors.
pub fn materialize(op: &dyn LinearOp<f64>) -> (usize, usize, Vec<f64>) {
    let rows = op.dim_out();
    let cols = op.dim_in();
    let mut mat = vec![0.0; rows * cols];
    for j in 0..cols {
        let mut e = vec![0.0; cols];
        e[j] = 1.0;
        let col = op.apply(&e);
        for i in 0..rows {
            mat[i * cols + j] = col[i];
        }
    }
    (rows, cols, mat)
}

/// Dense Gaussian elimination with partial pivoting; the independent route
/// against which CG solves are checked.
pub fn dense_solve(dim: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), dim * dim);
    assert_eq!(b.len(), dim);
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&i, &j| {
                m[i * dim + col]
                    .abs()
                    .partial_cmp(&m[j * dim + col].abs())
                    .unwrap()
            })
            .unwrap();
        assert!(m[pivot_row * dim + col].abs() > 1e-300, "singular test matrix");
        if pivot_row != col {
            for j in 0..dim {
                m.swap(col * dim + j, pivot_row * dim + j);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * dim + col];
        for row in col + 1..dim {
            let factor = m[row * dim + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..dim {
                m[row * dim + j] -= factor * m[col * dim + j];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut acc = rhs[row];
        for j in row + 1..dim {
            acc -= m[row * dim + j] * x[j];
        }
        x[row] = acc / m[row * dim + row];
    }
    x
}

pub fn matvec(rows: usize, cols: usize, a: &[f64], v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| (0..cols).map(|j| a[i * cols + j] * v[j]).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Newton step for the lower level computed through a dense factorization:
/// `a_y = y - H^{-1} grad` with `H` materialized and solved directly.
pub fn dense_newton_step(prob: &dyn BilevelProblem<f64>, x: &[f64], y: &[f64]) -> Vec<f64> {
    let grad = prob.grad_y_g(x, y);
    let (p, _, h) = materialize(prob.hess_yy(x, y).as_ref());
    let w = dense_solve(p, &h, &grad);
    sub(y, &w)
}

/// Classical approximate hypergradient through dense factorization:
/// `d_x - hess_xy H^{-1} d_y` with the element selected at `(x, a_y)`.
pub fn dense_hypergradient(prob: &dyn BilevelProblem<f64>, x: &[f64], y: &[f64]) -> Vec<f64> {
    let a_y = dense_newton_step(prob, x, y);
    let (d_x, d_y) = prob.df_element(x, &a_y);
    let (p, _, h) = materialize(prob.hess_yy(x, y).as_ref());
    let u = dense_solve(p, &h, &d_y);
    let bu = prob.hess_xy(x, y).apply(&u);
    sub(&d_x, &bu)
}

/// Seeded deterministic pseudo-random stream (xorshift), independent of the
/// library's sampling.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [-lim, lim).
    pub fn uniform(&mut self, lim: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * u - 1.0) * lim
    }

    pub fn vector(&mut self, dim: usize, lim: f64) -> Vec<f64> {
        (0..dim).map(|_| self.uniform(lim)).collect()
    }
}

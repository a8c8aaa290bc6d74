//! Small dense routines used when *constructing* the built-in problems
//! (orthogonal factors with prescribed spectra, closed-form minimizers).
//! Solver paths never factorize anything; they stay matrix-free.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{cast, Scalar};

/// `rows x cols` row-major matrix-vector product.
pub fn matvec<T: Scalar>(rows: usize, cols: usize, a: &[T], v: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    (0..rows)
        .map(|i| {
            let row = &a[i * cols..(i + 1) * cols];
            row.iter().zip(v).map(|(&x, &y)| x * y).sum()
        })
        .collect()
}

/// Transposed product `a^T v` for a `rows x cols` row-major matrix.
pub fn matvec_t<T: Scalar>(rows: usize, cols: usize, a: &[T], v: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(v.len(), rows);
    let mut out = vec![T::zero(); cols];
    for i in 0..rows {
        let vi = v[i];
        for (j, o) in out.iter_mut().enumerate() {
            *o = *o + a[i * cols + j] * vi;
        }
    }
    out
}

/// Solves a dense square system by Gaussian elimination with partial
/// pivoting. Panics on a numerically singular pivot; the built-in problems
/// only pass well-conditioned systems.
pub fn gauss_solve<T: Scalar>(dim: usize, a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
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
        if m[pivot_row * dim + col].abs() < cast(1e-300) {
            panic!("gauss_solve: singular matrix");
        }
        if pivot_row != col {
            for j in 0..dim {
                m.swap(col * dim + j, pivot_row * dim + j);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * dim + col];
        for row in col + 1..dim {
            let factor = m[row * dim + col] / pivot;
            if factor == T::zero() {
                continue;
            }
            for j in col..dim {
                m[row * dim + j] = m[row * dim + j] - factor * m[col * dim + j];
            }
            rhs[row] = rhs[row] - factor * rhs[col];
        }
    }
    let mut x = vec![T::zero(); dim];
    for row in (0..dim).rev() {
        let mut acc = rhs[row];
        for j in row + 1..dim {
            acc = acc - m[row * dim + j] * x[j];
        }
        x[row] = acc / m[row * dim + row];
    }
    x
}

/// Random orthogonal `dim x dim` matrix (row-major, orthonormal columns),
/// built by twice-iterated modified Gram-Schmidt on a seeded random matrix.
pub fn random_orthogonal<T: Scalar>(dim: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut cols: Vec<Vec<T>> = (0..dim)
        .map(|_| (0..dim).map(|_| cast(rng.gen_range(-1.0..1.0f64))).collect())
        .collect();
    for _pass in 0..2 {
        for j in 0..dim {
            for i in 0..j {
                let proj: T = cols[j].iter().zip(&cols[i]).map(|(&a, &b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (cj, &ci) in tail[0].iter_mut().zip(&head[i]) {
                    *cj = *cj - proj * ci;
                }
            }
            let nrm: T = cols[j].iter().map(|&v| v * v).sum::<T>().sqrt();
            if nrm < cast(1e-8) {
                // Degenerate draw; replace with a canonical axis and redo.
                cols[j] = (0..dim)
                    .map(|k| if k == j { T::one() } else { T::zero() })
                    .collect();
                continue;
            }
            for v in cols[j].iter_mut() {
                *v = *v / nrm;
            }
        }
    }
    let mut q = vec![T::zero(); dim * dim];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..dim {
            q[i * dim + j] = col[i];
        }
    }
    q
}

/// Assembles the exactly-symmetric matrix `Q diag(d) Q^T` (row-major).
pub fn spectral_assemble<T: Scalar>(dim: usize, q: &[T], d: &[T]) -> Vec<T> {
    let mut a = vec![T::zero(); dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let mut acc = T::zero();
            for (k, &dk) in d.iter().enumerate() {
                acc = acc + dk * q[i * dim + k] * q[j * dim + k];
            }
            a[i * dim + j] = acc;
            a[j * dim + i] = acc;
        }
    }
    a
}

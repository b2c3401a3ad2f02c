//! Small dense linear algebra over symmetric matrices.
//!
//! Matrices are flat row-major `&[T]` slices of length `n * n`. The sizes
//! involved here are tiny (feature covariances of a few dozen dimensions,
//! Gram matrices of at most a few hundred training points), so simple
//! textbook algorithms are the right tool: unblocked Cholesky and cyclic
//! Jacobi rotations.

use crate::scalar::{real, Real};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// stored dense row-major with zeros above the diagonal. Returns `None` if a
/// pivot is not strictly positive.
pub fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n, "matrix size mismatch");
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// In-place variant of [`cholesky`]: overwrites the lower triangle of `a`
/// with `L` (the strict upper triangle is left untouched and must be ignored
/// by the caller). Returns false if a pivot is not strictly positive.
pub fn cholesky_in_place<T: Real>(a: &mut [T], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return false;
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    true
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower<T: Real>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Solves `L^T x = y` for lower-triangular `L`.
pub fn solve_lower_transpose<T: Real>(l: &[T], n: usize, y: &[T]) -> Vec<T> {
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `(L L^T) x = b` given the Cholesky factor `L`.
pub fn cholesky_solve<T: Real>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let y = solve_lower(l, n, b);
    solve_lower_transpose(l, n, &y)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored row-major
/// as columns of `v`, so `a = v * diag(eigenvalues) * v^T`. Eigenvalues are
/// not sorted.
pub fn jacobi_eigh<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "matrix size mismatch");
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    if n <= 1 {
        return (m, v);
    }
    let tol: T = real::<T>(1e-14);
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        let scale: T = m.iter().map(|x| *x * *x).sum::<T>().sqrt() + T::min_positive_value();
        if off.sqrt() <= tol * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (real::<T>(2.0) * apq);
                // Stable tangent of the rotation angle.
                let t = if theta >= T::zero() {
                    T::one() / (theta + (T::one() + theta * theta).sqrt())
                } else {
                    -T::one() / (-theta + (T::one() + theta * theta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| m[i * n + i]).collect::<Vec<_>>();
    (eig, v)
}

/// `a * b` for dense row-major square matrices.
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Frobenius norm.
pub fn frobenius<T: Real>(a: &[T]) -> T {
    a.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry<T: Real>(a: &[T], n: usize) -> T {
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a[i * n + j] - a[j * n + i]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Symmetrizes in place: `a <- (a + a^T) / 2`.
pub fn symmetrize<T: Real>(a: &mut [T], n: usize) {
    let half: T = real(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (a[i * n + j] + a[j * n + i]) * half;
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_recomposes() {
        // 3x3 SPD matrix with a known factor.
        let a = vec![4.0f64, 12.0, -16.0, 12.0, 37.0, -43.0, -16.0, -43.0, 98.0];
        let l = cholesky(&a, 3).unwrap();
        assert_eq!(l, vec![2.0, 0.0, 0.0, 6.0, 1.0, 0.0, -8.0, 5.0, 3.0]);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![1.0f64, 2.0, 2.0, 1.0];
        assert!(cholesky(&a, 2).is_none());
    }

    #[test]
    fn solve_roundtrip() {
        let a = vec![4.0f64, 12.0, -16.0, 12.0, 37.0, -43.0, -16.0, -43.0, 98.0];
        let l = cholesky(&a, 3).unwrap();
        let x_true = [1.0, -2.0, 0.5];
        let mut b = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a[i * 3 + j] * x_true[j];
            }
        }
        let x = cholesky_solve(&l, 3, &b);
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_diagonal_case() {
        let a = vec![3.0f64, 0.0, 0.0, 7.0];
        let (mut eig, _) = jacobi_eigh(&a, 2);
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((eig[0] - 3.0).abs() < 1e-12 && (eig[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs() {
        // Symmetric matrix from a fixed seedless recipe.
        let n = 6;
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let v = ((i * 31 + j * 17) % 13) as f64 / 13.0;
                a[i * n + j] += v;
                a[j * n + i] += v;
            }
        }
        let (eig, v) = jacobi_eigh(&a, n);
        // Rebuild v * diag(eig) * v^T.
        let mut rebuilt = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += v[i * n + k] * eig[k] * v[j * n + k];
                }
                rebuilt[i * n + j] = s;
            }
        }
        for (x, y) in a.iter().zip(rebuilt.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn jacobi_f32_works() {
        let a: Vec<f32> = vec![2.0, 1.0, 1.0, 2.0];
        let (mut eig, _) = jacobi_eigh(&a, 2);
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((eig[0] - 1.0).abs() < 1e-5 && (eig[1] - 3.0).abs() < 1e-5);
    }
}

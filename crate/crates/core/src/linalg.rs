//! Small dense symmetric linear algebra for the shift metric.
//!
//! Covariance matrices here are at most a few hundred wide, so a cyclic
//! Jacobi eigendecomposition is plenty: it is simple, deterministic, and
//! converges to machine precision in a handful of sweeps.

use crate::error::{DgError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix (row-major, `n x n`).
///
/// Returns `(eigenvalues, vectors)` where `vectors[i * n + j]` is component
/// `i` of the eigenvector paired with `eigenvalues[j]`, so
/// `A = V diag(l) V^T`. Eigenvalues are sorted ascending.
pub fn sym_eigen<T: Scalar>(matrix: &[T], n: usize) -> Result<(Vec<T>, Vec<T>)> {
    if matrix.len() != n * n {
        return Err(DgError::Dimension(format!(
            "sym_eigen got {} entries for dimension {n}",
            matrix.len()
        )));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }

    let scale = matrix
        .iter()
        .fold(T::zero(), |acc, x| acc.max(x.abs()))
        .max(T::one());
    let stop = scale * T::epsilon();

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= stop {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::from_f64_const(2.0) * apq);
                let t = {
                    let denom = theta.abs() + (theta * theta + T::one()).sqrt();
                    if theta >= T::zero() {
                        T::one() / denom
                    } else {
                        -T::one() / denom
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<T> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&i, &j| eig[i].partial_cmp(&eig[j]).expect("finite eigenvalues"));

    let values: Vec<T> = order.iter().map(|&j| eig[j]).collect();
    let mut vectors = vec![T::zero(); n * n];
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + new_j] = v[i * n + old_j];
        }
    }
    Ok((values, vectors))
}

/// Largest off-diagonal asymmetry `max |A_ij - A_ji|`.
pub fn asymmetry<T: Scalar>(matrix: &[T], n: usize) -> T {
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((matrix[i * n + j] - matrix[j * n + i]).abs());
        }
    }
    worst
}

/// Row-major product of two `n x n` matrices.
pub fn matmul_square<T: Scalar>(a: &[T], b: &[T], n: usize) -> Vec<T> {
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

/// Symmetric PSD square root via eigendecomposition: eigenvalues are clamped
/// at zero, then `S = V diag(sqrt(l)) V^T`, so `S * S ~ C`.
///
/// `c` must be square and symmetric within `1e-8 * max(1, |C|_max)`.
pub fn psd_sqrt<T: Scalar>(c: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = c.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(DgError::Dimension(format!(
            "psd_sqrt expects a square matrix, got {shape:?}"
        )));
    }
    let n = shape[0];
    let scale = c
        .data()
        .iter()
        .fold(T::zero(), |acc, x| acc.max(x.abs()))
        .max(T::one());
    let tol = T::from_f64_const(1e-8) * scale;
    let asym = asymmetry(c.data(), n);
    if asym > tol {
        return Err(DgError::Numeric(format!(
            "psd_sqrt input asymmetric: max |C_ij - C_ji| = {asym}"
        )));
    }

    let (values, vectors) = sym_eigen(c.data(), n)?;
    let roots: Vec<T> = values.iter().map(|&l| l.max(T::zero()).sqrt()).collect();

    // S = V diag(roots) V^T
    let mut s = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for k in 0..n {
                acc += vectors[i * n + k] * roots[k] * vectors[j * n + k];
            }
            s[i * n + j] = acc;
            s[j * n + i] = acc;
        }
    }
    Tensor::from_vec(vec![n, n], s)
}

/// Sum of diagonal entries.
pub fn trace<T: Scalar>(m: &Tensor<T>) -> T {
    let n = m.shape()[0];
    (0..n).map(|i| m.data()[i * n + i]).fold(T::zero(), |a, v| a + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_sqrt_is_identity() {
        let eye = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = psd_sqrt(&eye).unwrap();
        assert!(max_abs_diff(s.data(), eye.data()) < 1e-14);
    }

    #[test]
    fn diagonal_sqrt() {
        let c = Tensor::from_vec(vec![2, 2], vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let s = psd_sqrt(&c).unwrap();
        assert!(max_abs_diff(s.data(), &[2.0, 0.0, 0.0, 3.0]) < 1e-12);
    }

    #[test]
    fn random_psd_reconstructs() {
        for seed in 0..30u64 {
            let mut stream = Stream::from_parts(&[seed, 0xABCD]);
            let n = 2 + (seed as usize % 7);
            let m: Vec<f64> = (0..n * n).map(|_| stream.range(-1.0, 1.0)).collect();
            // C = M^T M is PSD by construction
            let mut c = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += m[k * n + i] * m[k * n + j];
                    }
                    c[i * n + j] = acc;
                }
            }
            let scale = c.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            let ct = Tensor::from_vec(vec![n, n], c.clone()).unwrap();
            let s = psd_sqrt(&ct).unwrap();
            let ss = matmul_square(s.data(), s.data(), n);
            let resid = max_abs_diff(&ss, &c);
            assert!(
                resid <= 1e-8 * scale.max(1e-300),
                "seed {seed}: residual {resid} vs scale {scale}"
            );
            assert!(asymmetry(s.data(), n) < 1e-10);
        }
    }

    #[test]
    fn eigen_clamps_tiny_negative_modes() {
        // rank-1 PSD matrix has an exactly-zero eigenvalue that roundoff can
        // push slightly negative; the sqrt must stay real
        let c = Tensor::from_vec(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let s = psd_sqrt(&c).unwrap();
        assert!(s.data().iter().all(|v: &f64| v.is_finite()));
        let ss = matmul_square(s.data(), s.data(), 2);
        assert!(max_abs_diff(&ss, c.data()) < 1e-10);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let c = Tensor::from_vec(vec![2, 2], vec![1.0, 0.5, -0.5, 1.0]).unwrap();
        assert!(psd_sqrt(&c).is_err());
    }

    #[test]
    fn eigen_works_in_f32() {
        let c: Vec<f32> = vec![2.0, 1.0, 1.0, 2.0];
        let (values, _) = sym_eigen(&c, 2).unwrap();
        assert!((values[0] - 1.0).abs() < 1e-5);
        assert!((values[1] - 3.0).abs() < 1e-5);
    }
}

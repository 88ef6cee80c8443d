//! Dense symmetric positive-definite helpers on row-major `f64` matrices.

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

fn square(a: &Tensor2D) -> Result<usize> {
    if a.rows() != a.cols() {
        return Err(Error::shape(format!("expected a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    Ok(a.rows())
}

/// Lower-triangular `L` with `A = L Lᵀ`.
pub fn cholesky(a: &Tensor2D) -> Result<Tensor2D> {
    let n = square(a)?;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Factorization { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Tensor2D::new(n, n, l)
}

/// `A⁻¹` of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(a: &Tensor2D) -> Result<Tensor2D> {
    let l = cholesky(a)?;
    let n = l.rows();
    // Invert L (lower) by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut li = vec![0.0; n * n];
    for j in 0..n {
        li[j * n + j] = 1.0 / l.get(j, j);
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l.get(i, k) * li[k * n + j];
            }
            li[i * n + j] = s / l.get(i, i);
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += li[k * n + i] * li[k * n + j];
            }
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    Tensor2D::new(n, n, inv)
}

/// Upper-triangular `U` with `A⁻¹ = Uᵀ U`, the factor used for greedy
/// column-wise error compensation.
pub fn inverse_upper_cholesky(a: &Tensor2D) -> Result<Tensor2D> {
    let inv = spd_inverse(a)?;
    Ok(cholesky(&inv)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_normal, Rng};

    fn spd(n: usize, seed: u64) -> Tensor2D {
        let mut rng = Rng::new(seed);
        let x = rng_normal(&mut rng, n, 2 * n, 0.0, 1.0);
        let mut h = x.matmul(&x.transpose()).unwrap();
        for i in 0..n {
            h.set(i, i, h.get(i, i) + 0.1);
        }
        h
    }

    #[test]
    fn factor_reconstructs() {
        let a = spd(7, 1);
        let l = cholesky(&a).unwrap();
        for i in 0..7 {
            for j in i + 1..7 {
                assert_eq!(l.get(i, j), 0.0);
            }
        }
        assert!(l.matmul(&l.transpose()).unwrap().max_abs_diff(&a).unwrap() < 1e-10);
    }

    #[test]
    fn inverse_is_inverse() {
        let a = spd(9, 2);
        let inv = spd_inverse(&a).unwrap();
        let eye = Tensor2D::identity(9);
        assert!(a.matmul(&inv).unwrap().max_abs_diff(&eye).unwrap() < 1e-9);
    }

    #[test]
    fn upper_factor_of_inverse() {
        let a = spd(6, 3);
        let u = inverse_upper_cholesky(&a).unwrap();
        for i in 0..6 {
            for j in 0..i {
                assert_eq!(u.get(i, j), 0.0);
            }
        }
        let back = u.transpose().matmul(&u).unwrap();
        assert!(back.max_abs_diff(&spd_inverse(&a).unwrap()).unwrap() < 1e-10);
    }

    #[test]
    fn rejects_indefinite_and_non_square() {
        let a = Tensor2D::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::Factorization { pivot: 1, .. })));
        assert!(cholesky(&Tensor2D::zeros(2, 3)).is_err());
    }
}

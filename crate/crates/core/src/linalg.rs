//! Dense linear algebra used by the model: matrix exponential, the
//! continuous Lyapunov solve, symmetric square roots and a few slice
//! helpers for the inner kernel loops.

use nalgebra::{DMatrix, DVector};

use crate::error::{OuError, Result};

pub type Mat = DMatrix<f64>;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
// Backward-error thresholds on the 1-norm for the degree 3, 5, 7, 9, 13 approximants.
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068,
    5.371920351148152,
];

pub fn one_norm(a: &Mat) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn op_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn min_singular(a: &Mat) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn pade_odd_even(a: &Mat, coeffs: &[f64]) -> (Mat, Mat) {
    // Returns (U, V) with U odd and V even parts of the numerator polynomial.
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let a2 = a * a;
    let mut u_acc = id.scale(coeffs[1]);
    let mut v_acc = id.scale(coeffs[0]);
    let mut pow = id.clone();
    let m = coeffs.len() - 1;
    let mut k = 2;
    while k <= m {
        pow = &pow * &a2;
        v_acc += pow.scale(coeffs[k]);
        if k + 1 <= m {
            u_acc += pow.scale(coeffs[k + 1]);
        }
        k += 2;
    }
    (a * u_acc, v_acc)
}

fn pade13(a: &Mat) -> (Mat, Mat) {
    let b = &PADE13;
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]))
        + a6.scale(b[7])
        + a4.scale(b[5])
        + a2.scale(b[3])
        + id.scale(b[1]);
    let u = a * u_inner;
    let v = &a6 * (a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]))
        + a6.scale(b[6])
        + a4.scale(b[4])
        + a2.scale(b[2])
        + id.scale(b[0]);
    (u, v)
}

/// `exp(t * a)` by scaling and squaring with a diagonal Padé approximant whose
/// degree is picked from the 1-norm of `t * a`.
pub fn matrix_exp(a: &Mat, t: f64) -> Result<Mat> {
    if !a.is_square() {
        return Err(OuError::DimensionMismatch("matrix_exp needs a square matrix".into()));
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(OuError::Overflow("non-finite input to matrix_exp".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let at = a.scale(t);
    let norm = one_norm(&at);
    if norm == 0.0 {
        return Ok(Mat::identity(n, n));
    }
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_odd_even(&at, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_odd_even(&at, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_odd_even(&at, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_odd_even(&at, &PADE9);
        (u, v, 0)
    } else {
        let s = ((norm / THETA[4]).log2().ceil()).max(0.0) as i32;
        let scaled = at.scale(2f64.powi(-s));
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };
    let p = &v + &u;
    let q = &v - &u;
    let lu = q.lu();
    let mut r = lu
        .solve(&p)
        .ok_or_else(|| OuError::Overflow("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(OuError::Overflow(format!(
            "matrix exponential overflowed (|tA|_1 = {norm:e})"
        )));
    }
    Ok(r)
}

/// Solves `a X + X aᵀ = -q` through the Kronecker linearisation
/// `(I ⊗ a + a ⊗ I) vec X = -vec q`, followed by two refinement sweeps.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let nn = n * n;
    let mut big = Mat::zeros(nn, nn);
    // vec is column-major: index (i, j) -> i + j n.
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for k in 0..n {
                // (a X)_{ij} = sum_k a_{ik} X_{kj}
                big[(row, k + j * n)] += a[(i, k)];
                // (X aᵀ)_{ij} = sum_k X_{ik} a_{jk}
                big[(row, i + k * n)] += a[(j, k)];
            }
        }
    }
    let rhs = DVector::from_iterator(nn, q.iter().map(|v| -v));
    let lu = big.clone().full_piv_lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| OuError::NotHurwitz { margin: 0.0 })?;
    for _ in 0..2 {
        let r = &rhs - &big * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let x = Mat::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()).scale(0.5))
}

/// Symmetric positive semidefinite square root via eigendecomposition.
pub fn sym_sqrt(a: &Mat) -> Mat {
    let eig = a.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn sym_inv_sqrt(a: &Mat) -> Mat {
    let eig = a.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn min_sym_eigenvalue(a: &Mat) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()).scale(0.5)
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse_logdet(a: &Mat) -> Option<(Mat, f64)> {
    let chol = a.clone().cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some((symmetrize(&chol.inverse()), logdet))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---- slice helpers (column-major nalgebra storage) ----

/// out = m x
#[inline]
pub fn matvec(m: &Mat, x: &[f64], out: &mut [f64]) {
    let n = m.nrows();
    let data = m.as_slice();
    out[..n].iter_mut().for_each(|v| *v = 0.0);
    for (j, &xj) in x.iter().enumerate().take(m.ncols()) {
        if xj == 0.0 {
            continue;
        }
        let col = &data[j * n..(j + 1) * n];
        for i in 0..n {
            out[i] += col[i] * xj;
        }
    }
}

/// out = mᵀ x
#[inline]
pub fn matvec_t(m: &Mat, x: &[f64], out: &mut [f64]) {
    let n = m.nrows();
    let data = m.as_slice();
    for (j, o) in out.iter_mut().enumerate().take(m.ncols()) {
        let col = &data[j * n..(j + 1) * n];
        *o = col.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// xᵀ m x
#[inline]
pub fn quad_form(m: &Mat, x: &[f64]) -> f64 {
    let n = m.nrows();
    let data = m.as_slice();
    let mut s = 0.0;
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        let mut c = 0.0;
        for i in 0..n {
            c += col[i] * x[i];
        }
        s += c * x[j];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_time_is_identity() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let e = matrix_exp(&a, 0.0).unwrap();
        assert_eq!(e, Mat::identity(2, 2));
    }

    #[test]
    fn exp_of_diagonal() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let e = matrix_exp(&a, 1.0).unwrap();
        assert!((e[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-2f64).exp()).abs() < 1e-15);
        assert!(e[(0, 1)].abs() < 1e-300 && e[(1, 0)].abs() < 1e-300);
    }

    #[test]
    fn exp_of_jordan_block() {
        // exp(t(-I + N)) = e^{-t}(I + tN)
        let a = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let e = matrix_exp(&a, 1.0).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]).scale((-1f64).exp());
        assert!(op_norm(&(&e - &expect)) <= 1e-12 * op_norm(&expect));
    }

    #[test]
    fn exp_large_norm_rotation() {
        // exp of a rotation generator is a rotation by the angle
        let a = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let t = 37.3;
        let e = matrix_exp(&a, t).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!(max_abs_diff(&e, &expect) < 1e-12);
    }

    #[test]
    fn exp_overflow_is_reported() {
        let a = Mat::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(matrix_exp(&a, 1000.0), Err(OuError::Overflow(_))));
    }

    #[test]
    fn lyapunov_scalar() {
        let a = Mat::from_row_slice(1, 1, &[-1.0]);
        let q = Mat::from_row_slice(1, 1, &[2.0]);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_residual_nonnormal() {
        let a = Mat::from_row_slice(3, 3, &[-1.0, 2.0, 0.3, 0.0, -0.5, 1.0, 0.2, -0.4, -2.0]);
        let q = Mat::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let x = solve_lyapunov(&a, &q).unwrap();
        let r = &a * &x + &x * a.transpose() + &q;
        assert!(op_norm(&r) <= 1e-12 * op_norm(&q));
    }

    #[test]
    fn slice_helpers_match_nalgebra() {
        let m = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0]);
        let x = [0.5, -1.0, 2.0];
        let mut out = [0.0; 3];
        matvec(&m, &x, &mut out);
        let v = &m * DVector::from_column_slice(&x);
        assert_eq!(out.as_slice(), v.as_slice());
        matvec_t(&m, &x, &mut out);
        let v = m.transpose() * DVector::from_column_slice(&x);
        assert_eq!(out.as_slice(), v.as_slice());
        let qf = quad_form(&m, &x);
        let direct = (DVector::from_column_slice(&x).transpose() * &m * DVector::from_column_slice(&x))[(0, 0)];
        assert!((qf - direct).abs() < 1e-12);
    }
}

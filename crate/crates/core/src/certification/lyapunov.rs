use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solves `A' P + P A = -Q` through the vectorized system
/// `(I (x) A' + A' (x) I) vec(P) = -vec(Q)`.
///
/// Fails with [`Error::NotHurwitz`] when the system is singular or the
/// solution is not positive definite.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::NotHurwitz(format!(
            "shape mismatch: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let vec_p = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotHurwitz("Lyapunov operator is singular".into()))?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let min_eig = p.clone().symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(Error::NotHurwitz(format!(
            "Lyapunov solution is not positive definite (lambda_min = {min_eig:.3e})"
        )));
    }
    Ok(p)
}

/// `||A' P + P A + Q||_F / ||Q||_F`.
pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + q).norm() / q.norm()
}

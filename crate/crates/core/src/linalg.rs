//! Small dense linear-algebra helpers shared by the estimation and recovery
//! modules: Hermitian Cholesky solves, eigenvalue checks, least squares, and
//! non-negative least squares (Lawson-Hanson).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::C64;

/// Largest deviation from Hermitian symmetry, `max |A_ij - conj(A_ji)|`.
pub fn hermitian_deviation(a: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let dev = (a[(i, j)] - a[(j, i)].conj()).norm();
            if dev > worst {
                worst = dev;
            }
        }
    }
    worst
}

/// Replace `A` by `(A + A^H) / 2`, forcing exact Hermitian symmetry.
pub fn symmetrize_hermitian(a: &mut DMatrix<C64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
    }
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &DMatrix<C64>) -> Vec<f64> {
    let eig = a.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vals
}

/// Cholesky-backed solver for a Hermitian positive-definite matrix.
///
/// Exposes the log determinant and quadratic forms needed by the Gaussian
/// log density, plus a condition-number estimate from the factor diagonal.
pub struct HermitianSolver {
    chol: Cholesky<C64, Dyn>,
    ln_det: f64,
    cond_estimate: f64,
}

impl HermitianSolver {
    /// Factor `a`; returns `None` when the matrix is not positive definite.
    pub fn new(a: &DMatrix<C64>) -> Option<Self> {
        let chol = Cholesky::new(a.clone())?;
        let diag = chol.l_dirty().diagonal();
        let mut ln_det = 0.0;
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for d in diag.iter() {
            let v = d.re;
            // A complex-field Cholesky of an indefinite matrix can "succeed"
            // with sqrt of a negative pivot; the factor diagonal must be
            // real positive for a genuine PD input.
            if !(v > 0.0) || !v.is_finite() || d.im.abs() > 1e-8 * v {
                return None;
            }
            ln_det += 2.0 * v.ln();
            dmin = dmin.min(v);
            dmax = dmax.max(v);
        }
        let cond_estimate = (dmax / dmin).powi(2);
        Some(Self {
            chol,
            ln_det,
            cond_estimate,
        })
    }

    pub fn ln_det(&self) -> f64 {
        self.ln_det
    }

    /// Rough condition-number estimate from the Cholesky diagonal.
    pub fn condition_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn solve(&self, y: &DVector<C64>) -> DVector<C64> {
        self.chol.solve(y)
    }

    /// The real quadratic form `y^H A^{-1} y`.
    pub fn quadratic_form(&self, y: &DVector<C64>) -> f64 {
        let x = self.chol.solve(y);
        y.dotc(&x).re
    }
}

/// Least-squares solution of `a x = b` via SVD (works for rectangular `a`).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12)
        .map(|m| DVector::from_column_slice(m.as_slice()))
        .map_err(|e| Error::numerical(format!("SVD solve failed: {e}")))
}

/// Non-negative least squares `min ||a x - b||` subject to `x >= 0`
/// (Lawson-Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];

    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
        * b.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale.max(1e-300);

    let solve_passive = |passive: &[bool]| -> Result<Vec<(usize, f64)>> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(cols.iter());
        let z = lstsq(&sub, b)?;
        Ok(cols.into_iter().zip(z.iter().copied()).collect())
    };

    // Outer loop has at most n activations; 3n + 10 guards pathological cycling.
    for _ in 0..(3 * n + 10) {
        let residual = b - a * &x;
        let gradient = a.transpose() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && gradient[j] > tol {
                if best.map_or(true, |(_, g)| gradient[j] > g) {
                    best = Some((j, gradient[j]));
                }
            }
        }
        let Some((enter, _)) = best else {
            break;
        };
        passive[enter] = true;

        loop {
            let z = solve_passive(&passive)?;
            if z.iter().all(|&(_, v)| v > 0.0) {
                x.fill(0.0);
                for &(j, v) in &z {
                    x[j] = v;
                }
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = f64::INFINITY;
            for &(j, v) in &z {
                if v <= 0.0 {
                    let denom = x[j] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                return Err(Error::numerical("NNLS step size diverged"));
            }
            let mut znew = DVector::<f64>::zeros(n);
            for &(j, v) in &z {
                znew[j] = v;
            }
            for j in 0..n {
                if passive[j] {
                    x[j] += alpha * (znew[j] - x[j]);
                    if x[j] <= tol {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}

/// Solve `min ||a x - b||` with complex data and real non-negative `x` by
/// stacking real and imaginary parts.
pub fn nnls_complex(a: &DMatrix<C64>, b: &DVector<C64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    let mut ar = DMatrix::<f64>::zeros(2 * m, n);
    for i in 0..m {
        for j in 0..n {
            ar[(i, j)] = a[(i, j)].re;
            ar[(m + i, j)] = a[(i, j)].im;
        }
    }
    let mut br = DVector::<f64>::zeros(2 * m);
    for i in 0..m {
        br[i] = b[i].re;
        br[m + i] = b[i].im;
    }
    nnls(&ar, &br)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermitian_solver_identity() {
        let eye = DMatrix::<C64>::identity(4, 4);
        let solver = HermitianSolver::new(&eye).unwrap();
        assert_relative_eq!(solver.ln_det(), 0.0, epsilon = 1e-14);
        let y = DVector::from_fn(4, |i, _| C64::new(i as f64, 1.0));
        let q = solver.quadratic_form(&y);
        let want: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        assert_relative_eq!(q, want, epsilon = 1e-12);
    }

    #[test]
    fn hermitian_solver_rejects_indefinite() {
        let mut m = DMatrix::<C64>::identity(3, 3);
        m[(2, 2)] = C64::new(-1.0, 0.0);
        assert!(HermitianSolver::new(&m).is_none());
    }

    #[test]
    fn hermitian_solver_ln_det_scaling() {
        let m = DMatrix::<C64>::identity(5, 5) * C64::new(2.0, 0.0);
        let solver = HermitianSolver::new(&m).unwrap();
        assert_relative_eq!(solver.ln_det(), 5.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let x = nnls(&a, &b).unwrap();
        let free = lstsq(&a, &b).unwrap();
        assert!(free.iter().all(|&v| v > 0.0));
        assert_relative_eq!(x[0], free[0], epsilon = 1e-9);
        assert_relative_eq!(x[1], free[1], epsilon = 1e-9);
    }

    #[test]
    fn nnls_clamps_negative_component() {
        // Unconstrained solution is [2, -1]; NNLS must clamp x[1] to zero
        // and re-fit x[0], giving [1, 0].
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, -1.0]);
        let x = nnls(&a, &b).unwrap();
        assert!(x.iter().all(|&v| v >= 0.0));
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn nnls_zero_rhs_gives_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let b = DVector::zeros(2);
        let x = nnls(&a, &b).unwrap();
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn nnls_complex_recovers_real_weights() {
        let a = DMatrix::from_fn(4, 2, |i, j| {
            C64::from_polar(1.0, 0.37 * (i as f64 + 1.0) * (j as f64 + 1.0))
        });
        let truth = DVector::from_column_slice(&[0.8, 1.7]);
        let b = DVector::from_fn(4, |i, _| a[(i, 0)] * truth[0] + a[(i, 1)] * truth[1]);
        let x = nnls_complex(&a, &b).unwrap();
        assert_relative_eq!(x[0], 0.8, epsilon = 1e-8);
        assert_relative_eq!(x[1], 1.7, epsilon = 1e-8);
    }

    #[test]
    fn symmetrize_makes_exactly_hermitian() {
        let mut m = DMatrix::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64));
        symmetrize_hermitian(&mut m);
        assert_eq!(hermitian_deviation(&m), 0.0);
    }
}

//! Dense symmetric helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
///
/// Each eigenvector is sign-normalized so that its largest-magnitude entry
/// is positive (first such entry on ties).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    if !m.is_square() {
        return invalid(format!("matrix is {}x{}, not square", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix has non-finite entries");
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000 * n.max(1))
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let mut arg = 0;
        for r in 1..n {
            if col[r].abs() > col[arg].abs() {
                arg = r;
            }
        }
        if col[arg] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(c, &col);
    }
    Ok(SymEigen { values, vectors })
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return invalid("matrix is not square");
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > tol * scale {
        return invalid("matrix is not symmetric");
    }
    Ok(())
}

/// `m^power` for a symmetric positive-definite `m`, via its eigendecomposition.
pub fn spd_power(m: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m, 1e-10)?;
    let e = sym_eigen(m)?;
    let n = m.nrows();
    if e.values[n - 1] <= 0.0 {
        return invalid(format!(
            "matrix is not positive definite (smallest eigenvalue {})",
            e.values[n - 1]
        ));
    }
    let scaled = DMatrix::from_fn(n, n, |r, c| e.vectors[(r, c)] * e.values[c].powf(power));
    let out = &scaled * e.vectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_descending_and_sign_fixed() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let e = sym_eigen(&m).unwrap();
        assert_eq!(e.values.as_slice(), &[4.0, 1.0]);
        assert_eq!(e.vectors.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(e.vectors.column(1).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn inverse_sqrt_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let l = spd_power(&m, -0.5).unwrap();
        assert!((l[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(l[(0, 1)].abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_power(&bad, 0.5).is_err());
    }
}

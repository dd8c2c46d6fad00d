//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 0; // 0 = iterate until convergence

/// Eigenpairs of a symmetric matrix, sorted by signed eigenvalue, largest
/// first. Ties keep the solver's output order.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> Result<SortedEigen> {
    if !m.is_square() {
        return Err(Error::Eigen(format!(
            "matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // stable sort keeps solver order for equal eigenvalues
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let n = m.nrows();
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SortedEigen { values, vectors })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Column order
/// is preserved, so the span of the first `j` output columns equals the
/// span of the first `j` input columns.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        let mut v = q.column(j).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v.axpy(-proj, &qi, 1.0);
            }
        }
        let norm = v.norm();
        if !(norm > 1e-12) {
            return Err(Error::Eigen(format!(
                "basis column {j} is linearly dependent on earlier columns"
            )));
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q)
}

pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // Tr(AB) = sum_ij A_ij B_ji
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Largest-eigenvalue eigenvector of a symmetric matrix.
pub fn top_eigenvector(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eig = symmetric_eigen_desc(m)?;
    Ok(eig.vectors.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_sorted_by_signed_value() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-5.0, 3.0, 1.0]));
        let eig = symmetric_eigen_desc(&m).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0, -5.0]);
        assert_relative_eq!(eig.vectors[(1, 0)].abs(), 1.0);
        assert_relative_eq!(eig.vectors[(0, 2)].abs(), 1.0);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let eig = symmetric_eigen_desc(&m).unwrap();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eig.values.clone()));
        let back = &eig.vectors * lambda * eig.vectors.transpose();
        assert_relative_eq!(back, m, epsilon = 1e-10);
    }

    #[test]
    fn gram_schmidt_gives_orthonormal_columns() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let q = orthonormalize_columns(&m).unwrap();
        let gram = q.transpose() * &q;
        assert_relative_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(q.column(0).into_owned(), m.column(0).into_owned());
    }

    #[test]
    fn gram_schmidt_rejects_dependent_columns() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(orthonormalize_columns(&m).is_err());
    }

    #[test]
    fn non_finite_matrix_rejected() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(symmetric_eigen_desc(&m).is_err());
    }
}

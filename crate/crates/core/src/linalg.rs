//! Dense symmetric eigen-decomposition helpers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs sorted by eigenvalue, largest first.
pub(crate) struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub(crate) fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<SortedEigen> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("eigensolve on non-finite matrix".into()));
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let n = matrix.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("eigensolve produced non-finite values".into()));
    }
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // Fix the sign so the largest-magnitude component is positive.
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1.abs() + 1e-12 { (i, v) } else { best });
        if pivot.1 < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SortedEigen { values, vectors })
}

pub(crate) fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    let values = matrix.clone().symmetric_eigenvalues();
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// tr(Aᵀ B A) for square symmetric `b` and tall `a`.
pub(crate) fn quadratic_trace(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ba = b * a;
    a.iter().zip(ba.iter()).map(|(x, y)| x * y).sum()
}

//! Small dense helpers over `nalgebra` shared by LDA and PLDA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor applied to covariance estimates.
pub const EIGEN_FLOOR: f64 = 1e-8;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Clamp eigenvalues from below and rebuild; the result is symmetric
/// positive definite.
pub fn floor_spd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance has non-finite entries".into()));
    }
    let (values, vectors) = sorted_eigen(m);
    let d = DVector::from_iterator(values.len(), values.iter().map(|v| v.max(floor)));
    Ok(symmetrize(&(&vectors * DMatrix::from_diagonal(&d) * vectors.transpose())))
}

pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Labels grouped by first appearance; the result lists member indices.
pub fn group_by_label<L: PartialEq>(labels: &[L]) -> Vec<Vec<usize>> {
    let mut keys: Vec<&L> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match keys.iter().position(|k| *k == l) {
            Some(g) => groups[g].push(i),
            None => {
                keys.push(l);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Row vectors of equal, non-zero dimension.
pub fn check_vectors(vectors: &[Vec<f64>], labels: usize) -> Result<usize> {
    let Some(first) = vectors.first() else {
        return Err(Error::EmptyData("no vectors".into()));
    };
    let d = first.len();
    if d == 0 {
        return Err(Error::EmptyInput("zero-dimensional vectors".into()));
    }
    if labels != vectors.len() {
        return Err(Error::shape("labels", &[vectors.len()], &[labels]));
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::shape("vectors", &[d], &[bad.len()]));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("backend input vectors"));
    }
    Ok(d)
}

pub fn mean_of(vectors: &[Vec<f64>], idx: impl Iterator<Item = usize>, d: usize) -> DVector<f64> {
    let mut m = DVector::zeros(d);
    let mut n = 0usize;
    for i in idx {
        for (a, b) in m.iter_mut().zip(&vectors[i]) {
            *a += b;
        }
        n += 1;
    }
    m / n.max(1) as f64
}

use nalgebra::DMatrix;

use super::linalg::{check_vectors, group_by_label, mean_of, sorted_eigen, symmetrize};
use crate::error::{Error, Result};

/// Relative ridge added to the within-class scatter: `1e-6 · trace / d`.
pub const LDA_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LdaTransform {
    pub mean: Vec<f64>,
    /// `out × in`, unit-norm rows ordered by decreasing eigenvalue.
    pub projection: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl LdaTransform {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.len()
    }

    /// Center with the training mean, then project.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim() {
            return Err(Error::shape("lda_apply", &[self.in_dim()], &[v.len()]));
        }
        Ok(self
            .projection
            .iter()
            .map(|row| row.iter().zip(v).zip(&self.mean).map(|((r, x), m)| r * (x - m)).sum())
            .collect())
    }
}

/// Between- and within-class scatter matrices (unnormalized sums).
pub fn scatter_matrices<L: PartialEq>(vectors: &[Vec<f64>], labels: &[L]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = check_vectors(vectors, labels.len())?;
    let groups = group_by_label(labels);
    let mean = mean_of(vectors, 0..vectors.len(), d);
    let mut sb = DMatrix::zeros(d, d);
    let mut sw = DMatrix::zeros(d, d);
    for g in &groups {
        let m = mean_of(vectors, g.iter().copied(), d);
        let diff = &m - &mean;
        sb += (&diff * diff.transpose()) * g.len() as f64;
        for &i in g {
            let x = nalgebra::DVector::from_column_slice(&vectors[i]) - &m;
            sw += &x * x.transpose();
        }
    }
    Ok((sb, sw))
}

/// Fisher LDA via the generalized symmetric eigenproblem `Sb v = λ Sw v`.
pub fn lda_train<L: PartialEq>(vectors: &[Vec<f64>], labels: &[L], out_dim: usize) -> Result<LdaTransform> {
    let d = check_vectors(vectors, labels.len())?;
    let groups = group_by_label(labels);
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!("LDA needs at least 2 classes, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "LDA needs at least 2 samples per class (item {} is alone)",
            g[0]
        )));
    }
    let max_dim = d.min(groups.len() - 1);
    if out_dim == 0 || out_dim > max_dim {
        return Err(Error::InvalidArgument(format!(
            "LDA output dimension {out_dim} not in 1..={max_dim} ({} classes, input dim {d})",
            groups.len()
        )));
    }
    let (sb, mut sw) = scatter_matrices(vectors, labels)?;
    let ridge = LDA_RIDGE * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += ridge.max(f64::MIN_POSITIVE);
    }
    // Sw = L Lᵀ;  Sb v = λ Sw v  <=>  (L⁻¹ Sb L⁻ᵀ) u = λ u,  v = L⁻ᵀ u
    let chol = sw
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter is singular".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("within-class scatter is singular".into()))?;
    let reduced = symmetrize(&(&l_inv * &sb * l_inv.transpose()));
    let (values, vectors_u) = sorted_eigen(&reduced);
    let dirs = l_inv.transpose() * vectors_u;
    let mut projection = Vec::with_capacity(out_dim);
    for c in 0..out_dim {
        let mut row: Vec<f64> = dirs.column(c).iter().copied().collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pivot = row.iter().copied().fold(0.0, |a: f64, v| if v.abs() > a.abs() { v } else { a });
        let s = pivot.signum() / norm;
        row.iter_mut().for_each(|v| *v *= s);
        projection.push(row);
    }
    Ok(LdaTransform {
        mean: mean_of(vectors, 0..vectors.len(), d).iter().copied().collect(),
        projection,
        eigenvalues: values[..out_dim].to_vec(),
    })
}

/// `v / ||v||₂`.
pub fn length_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidArgument("cannot length-normalize a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

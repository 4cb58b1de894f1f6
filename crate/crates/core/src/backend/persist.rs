//! Back-end models stored in the named-tensor checkpoint container.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::lda::LdaTransform;
use super::plda::PldaModel;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

fn fetch<'s>(store: &'s ParamStore, name: &str) -> Result<&'s Tensor> {
    let id = store.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    Ok(store.value(id))
}

fn square(t: &Tensor, d: usize, name: &str) -> Result<DMatrix<f64>> {
    if t.shape() != [d, d] {
        return Err(Error::Checkpoint(format!("{name} has shape {:?}, expected [{d}, {d}]", t.shape())));
    }
    Ok(DMatrix::from_row_slice(d, d, t.data()))
}

fn matrix_tensor(m: &DMatrix<f64>) -> Result<Tensor> {
    let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
    Tensor::new(vec![m.nrows(), m.ncols()], data)
}

impl LdaTransform {
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        s.add("lda.mean", Tensor::new(vec![self.in_dim()], self.mean.clone())?);
        s.add(
            "lda.projection",
            Tensor::new(vec![self.out_dim(), self.in_dim()], self.projection.concat())?,
        );
        s.add("lda.eigenvalues", Tensor::new(vec![self.out_dim()], self.eigenvalues.clone())?);
        Ok(s)
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mean = fetch(store, "lda.mean")?.data().to_vec();
        let proj = fetch(store, "lda.projection")?;
        let eigenvalues = fetch(store, "lda.eigenvalues")?.data().to_vec();
        let [out, inp] = proj.shape() else {
            return Err(Error::Checkpoint("lda.projection is not a matrix".into()));
        };
        if *inp != mean.len() || *out != eigenvalues.len() {
            return Err(Error::Checkpoint("LDA tensors have inconsistent sizes".into()));
        }
        let projection = proj.data().chunks(*inp).map(<[f64]>::to_vec).collect();
        Ok(Self { mean, projection, eigenvalues })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_store()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(&ParamStore::load(path)?)
    }
}

impl PldaModel {
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        s.add("plda.mu", Tensor::new(vec![self.dim()], self.mu.iter().copied().collect())?);
        s.add("plda.between", matrix_tensor(&self.between)?);
        s.add("plda.within", matrix_tensor(&self.within)?);
        Ok(s)
    }

    /// Stored matrices are taken as-is; they were floored when trained.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mu = fetch(store, "plda.mu")?.data();
        let d = mu.len();
        Ok(Self {
            mu: DVector::from_column_slice(mu),
            between: square(fetch(store, "plda.between")?, d, "plda.between")?,
            within: square(fetch(store, "plda.within")?, d, "plda.within")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_store()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(&ParamStore::load(path)?)
    }
}

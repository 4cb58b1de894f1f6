use nalgebra::{DMatrix, DVector};

use super::linalg::{check_vectors, floor_spd, group_by_label, inverse_spd, log_det_spd, mean_of, symmetrize, to_dvector, EIGEN_FLOOR};
use crate::error::{Error, Result};

/// Two-covariance model: speaker mean `y ~ N(mu, B)`, observation
/// `x | y ~ N(y, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
}

impl PldaModel {
    pub fn new(mu: DVector<f64>, between: DMatrix<f64>, within: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(Error::shape("plda", &[d, d], &[between.nrows(), within.nrows()]));
        }
        Ok(Self {
            mu,
            between: floor_spd(&between, EIGEN_FLOOR)?,
            within: floor_spd(&within, EIGEN_FLOOR)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PldaTrainOptions {
    /// EM refinement passes after the moment estimate (0 = none).
    pub em_iterations: usize,
}

struct Groups {
    d: usize,
    groups: Vec<Vec<usize>>,
}

fn grouped<L: PartialEq>(vectors: &[Vec<f64>], labels: &[L]) -> Result<Groups> {
    let d = check_vectors(vectors, labels.len())?;
    let groups = group_by_label(labels);
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!("PLDA needs at least 2 speakers, got {}", groups.len())));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InvalidArgument(
            "PLDA needs at least 2 utterances per speaker (within-speaker covariance is unidentifiable)".into(),
        ));
    }
    Ok(Groups { d, groups })
}

/// Moment estimates: pooled within covariance (unbiased) and the covariance
/// of speaker means corrected for the `W / n_s` noise they carry.
fn moments(vectors: &[Vec<f64>], g: &Groups) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = g.d;
    let n_total = vectors.len();
    let s = g.groups.len();
    let mu = mean_of(vectors, 0..n_total, d);
    let mut within = DMatrix::zeros(d, d);
    let mut means = Vec::with_capacity(s);
    for grp in &g.groups {
        let m = mean_of(vectors, grp.iter().copied(), d);
        for &i in grp {
            let x = to_dvector(&vectors[i]) - &m;
            within += &x * x.transpose();
        }
        means.push(m);
    }
    within /= (n_total - s) as f64;
    let mut between = DMatrix::zeros(d, d);
    for m in &means {
        let c = m - &mu;
        between += &c * c.transpose();
    }
    between /= (s - 1) as f64;
    let inv_n = g.groups.iter().map(|grp| 1.0 / grp.len() as f64).sum::<f64>() / s as f64;
    between -= &within * inv_n;
    (mu, symmetrize(&between), symmetrize(&within))
}

/// One EM pass for the two-covariance model.
fn em_step(vectors: &[Vec<f64>], g: &Groups, model: &PldaModel) -> Result<PldaModel> {
    let d = g.d;
    let b_inv = inverse_spd(&model.between, "between covariance")?;
    let w_inv = inverse_spd(&model.within, "within covariance")?;
    let b_inv_mu = &b_inv * &model.mu;
    let mut posts = Vec::with_capacity(g.groups.len());
    for grp in &g.groups {
        let mut sum = DVector::zeros(d);
        for &i in grp {
            sum += to_dvector(&vectors[i]);
        }
        let precision = &b_inv + &w_inv * grp.len() as f64;
        let cov = inverse_spd(&precision, "speaker posterior precision")?;
        let mean = &cov * (&b_inv_mu + &w_inv * sum);
        posts.push((mean, cov));
    }
    let s = posts.len() as f64;
    let mu = posts.iter().fold(DVector::zeros(d), |a, (m, _)| a + m) / s;
    let mut between = DMatrix::zeros(d, d);
    let mut within = DMatrix::zeros(d, d);
    for (grp, (m, c)) in g.groups.iter().zip(&posts) {
        let dm = m - &mu;
        between += c + &dm * dm.transpose();
        for &i in grp {
            let r = to_dvector(&vectors[i]) - m;
            within += c + &r * r.transpose();
        }
    }
    PldaModel::new(mu, between / s, within / vectors.len() as f64)
}

pub fn plda_train<L: PartialEq>(vectors: &[Vec<f64>], labels: &[L], opts: &PldaTrainOptions) -> Result<PldaModel> {
    let g = grouped(vectors, labels)?;
    let (mu, between, within) = moments(vectors, &g);
    let mut model = PldaModel::new(mu, between, within)?;
    for _ in 0..opts.em_iterations {
        model = em_step(vectors, &g, &model)?;
    }
    Ok(model)
}

pub const DEFAULT_ADAPT_ALPHA: f64 = 0.5;

/// Interpolates covariances with an in-domain estimate and takes the
/// in-domain mean.
pub fn plda_adapt<L: PartialEq>(
    model: &PldaModel,
    vectors: &[Vec<f64>],
    labels: &[L],
    alpha: f64,
    opts: &PldaTrainOptions,
) -> Result<PldaModel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("adaptation weight {alpha} not in [0, 1]")));
    }
    let ind = plda_train(vectors, labels, opts)?;
    if ind.dim() != model.dim() {
        return Err(Error::shape("plda_adapt", &[model.dim()], &[ind.dim()]));
    }
    let mu = mean_of(vectors, 0..vectors.len(), model.dim());
    PldaModel::new(
        mu,
        &model.between * alpha + &ind.between * (1.0 - alpha),
        &model.within * alpha + &ind.within * (1.0 - alpha),
    )
}

/// Precomputed quadratic-form scorer for a [`PldaModel`].
#[derive(Clone, Debug)]
pub struct PldaScorer {
    mu: DVector<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    offset: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let total = &model.between + &model.within;
        let t_inv = inverse_spd(&total, "total covariance")?;
        let schur = symmetrize(&(&total - &model.between * &t_inv * &model.between));
        let m = inverse_spd(&schur, "same-speaker Schur complement")?;
        let q = symmetrize(&(&m - &t_inv));
        let p = symmetrize(&(-(&t_inv * &model.between * &m)));
        let offset = 0.5 * (log_det_spd(&total, "total covariance")? + log_det_spd(&m, "Schur inverse")?);
        Ok(Self { mu: model.mu.clone(), q, p, offset })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Same-speaker versus different-speaker log-likelihood ratio.
    pub fn llr(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        let d = self.dim();
        if enroll.len() != d || test.len() != d {
            return Err(Error::shape("plda_llr", &[d], &[enroll.len(), test.len()]));
        }
        let e = to_dvector(enroll) - &self.mu;
        let t = to_dvector(test) - &self.mu;
        let qe = &self.q * &e;
        let qt = &self.q * &t;
        let pe = &self.p * &e;
        let pt = &self.p * &t;
        // each pair is added in an order that is unchanged by swapping e, t
        let quad = e.dot(&qe) + t.dot(&qt);
        let cross = t.dot(&pe) + e.dot(&pt);
        Ok(-0.5 * (quad + cross) + self.offset)
    }
}

pub fn plda_llr(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    PldaScorer::new(model)?.llr(enroll, test)
}

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::lda::{length_normalize, LdaTransform};
use super::plda::PldaScorer;
use super::trials::{EnrollmentModel, ScoreRecord, SkippedTrial, Trial};
use crate::error::{Error, Result};

/// Center, project, length-normalize.
pub fn preprocess(lda: &LdaTransform, v: &[f64]) -> Result<Vec<f64>> {
    length_normalize(&lda.apply(v)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredTrials {
    /// In trial-list order, skipped rows omitted.
    pub scores: Vec<ScoreRecord>,
    pub skipped: Vec<SkippedTrial>,
}

/// Everything needed to turn raw embeddings into PLDA scores.
pub struct SidBackend<'a> {
    pub lda: &'a LdaTransform,
    pub plda: &'a PldaScorer,
}

impl SidBackend<'_> {
    /// Mean of the preprocessed enrollment vectors, re-normalized.
    pub fn enroll_vector(&self, model: &EnrollmentModel, embeddings: &HashMap<String, Vec<f64>>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.lda.out_dim()];
        for u in &model.utts {
            let v = embeddings
                .get(u)
                .ok_or_else(|| Error::InvalidArgument(format!("no embedding for enrollment utterance {u}")))?;
            for (a, x) in acc.iter_mut().zip(preprocess(self.lda, v)?) {
                *a += x;
            }
        }
        length_normalize(&acc)
    }

    /// PLDA LLR per trial. Unresolvable rows are reported in `skipped`
    /// rather than dropped silently.
    pub fn score_trials(
        &self,
        trials: &[Trial],
        enrollment: &[EnrollmentModel],
        embeddings: &HashMap<String, Vec<f64>>,
    ) -> Result<ScoredTrials> {
        let mut models: HashMap<&str, std::result::Result<Vec<f64>, String>> = HashMap::new();
        for m in enrollment {
            models.insert(&m.id, self.enroll_vector(m, embeddings).map_err(|e| e.to_string()));
        }
        let mut tests: HashMap<&str, std::result::Result<Vec<f64>, String>> = HashMap::new();
        let mut out = ScoredTrials::default();
        for t in trials {
            let skip = |reason: String| SkippedTrial { enroll: t.enroll.clone(), test: t.test.clone(), reason };
            let enroll = match models.get(t.enroll.as_str()) {
                None => {
                    out.skipped.push(skip(format!("unknown enrollment model {}", t.enroll)));
                    continue;
                }
                Some(Err(e)) => {
                    out.skipped.push(skip(e.clone()));
                    continue;
                }
                Some(Ok(v)) => v,
            };
            let test = tests.entry(&t.test).or_insert_with(|| match embeddings.get(&t.test) {
                Some(v) => preprocess(self.lda, v).map_err(|e| e.to_string()),
                None => Err(format!("no embedding for test utterance {}", t.test)),
            });
            match test {
                Ok(v) => out.scores.push(ScoreRecord {
                    enroll: t.enroll.clone(),
                    test: t.test.clone(),
                    score: self.plda.llr(enroll, v)?,
                }),
                Err(e) => out.skipped.push(skip(e.clone())),
            }
        }
        Ok(out)
    }
}

fn check_aligned(lists: &[&[ScoreRecord]]) -> Result<()> {
    let first = lists[0];
    for other in &lists[1..] {
        if other.len() != first.len() {
            return Err(Error::Misaligned {
                row: first.len().min(other.len()),
                left: format!("{} rows", first.len()),
                right: format!("{} rows", other.len()),
            });
        }
        for (row, (a, b)) in first.iter().zip(other.iter()).enumerate() {
            if a.enroll != b.enroll || a.test != b.test {
                return Err(Error::Misaligned {
                    row,
                    left: format!("{}/{}", a.enroll, a.test),
                    right: format!("{}/{}", b.enroll, b.test),
                });
            }
        }
    }
    Ok(())
}

/// Elementwise weighted sum of row-aligned score lists.
pub fn fuse_scores(lists: &[&[ScoreRecord]], weights: &[f64]) -> Result<Vec<ScoreRecord>> {
    if lists.len() < 2 {
        return Err(Error::InvalidArgument(format!("fusion needs at least 2 score lists, got {}", lists.len())));
    }
    if weights.len() != lists.len() {
        return Err(Error::shape("fuse_scores", &[lists.len()], &[weights.len()]));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("fusion weights must be finite".into()));
    }
    check_aligned(lists)?;
    Ok((0..lists[0].len())
        .map(|i| ScoreRecord {
            enroll: lists[0][i].enroll.clone(),
            test: lists[0][i].test.clone(),
            score: lists.iter().zip(weights).map(|(l, w)| w * l[i].score).sum(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl FusionModel {
    pub fn apply(&self, lists: &[&[ScoreRecord]]) -> Result<Vec<ScoreRecord>> {
        let mut fused = fuse_scores(lists, &self.weights)?;
        fused.iter_mut().for_each(|r| r.score += self.offset);
        Ok(fused)
    }
}

/// Keeps Newton steps defined on separable data.
const FUSION_RIDGE: f64 = 1e-6;
const FUSION_MAX_ITERS: usize = 100;

/// Logistic-regression fusion fitted by Newton's method. `is_target[i]`
/// labels row `i` of every list.
pub fn fuse_train(lists: &[&[ScoreRecord]], is_target: &[bool]) -> Result<FusionModel> {
    if lists.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one score list".into()));
    }
    check_aligned(lists)?;
    let n = lists[0].len();
    if is_target.len() != n {
        return Err(Error::shape("fuse_train", &[n], &[is_target.len()]));
    }
    if !is_target.contains(&true) || !is_target.contains(&false) {
        return Err(Error::InvalidArgument("fusion training needs both target and nontarget trials".into()));
    }
    let k = lists.len() + 1;
    let feature = |i: usize, j: usize| if j < lists.len() { lists[j][i].score } else { 1.0 };
    let mut theta = DVector::<f64>::zeros(k);
    for _ in 0..FUSION_MAX_ITERS {
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::identity(k, k) * FUSION_RIDGE;
        grad += &theta * FUSION_RIDGE;
        for i in 0..n {
            let z: f64 = (0..k).map(|j| theta[j] * feature(i, j)).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let y = if is_target[i] { 1.0 } else { 0.0 };
            for a in 0..k {
                grad[a] += (p - y) * feature(i, a);
                for b in 0..k {
                    hess[(a, b)] += p * (1.0 - p) * feature(i, a) * feature(i, b);
                }
            }
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Numerical("fusion Hessian is not positive definite".into()))?
            .solve(&grad);
        theta -= &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fuse_train"));
    }
    Ok(FusionModel { weights: theta.rows(0, k - 1).iter().copied().collect(), offset: theta[k - 1] })
}

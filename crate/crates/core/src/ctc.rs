//! Connectionist temporal classification over phoneme sequences.
//!
//! The loss is a log-space forward recursion built from tape ops, so its
//! gradient comes from the same reverse pass as the rest of the model.
//! Lattice cells that no complete alignment can pass through are left out
//! of the graph; every remaining cell holds a finite log-probability.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Phoneme indices in `0..alphabet`; the blank is index `alphabet`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSequence {
    symbols: Vec<usize>,
    alphabet: usize,
}

impl LabelSequence {
    pub fn new(symbols: Vec<usize>, alphabet: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::EmptyInput("CTC label sequence".into()));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= alphabet) {
            return Err(Error::LabelOutOfRange { label: bad, classes: alphabet });
        }
        Ok(Self { symbols, alphabet })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn blank(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Adjacent equal symbols; each needs a separating blank frame.
    pub fn repeats(&self) -> usize {
        self.symbols.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub fn min_frames(&self) -> usize {
        self.len() + self.repeats()
    }

    pub fn check_feasible(&self, frames: usize) -> Result<()> {
        if frames < self.min_frames() {
            return Err(Error::InfeasibleAlignment {
                labels: self.len(),
                repeats: self.repeats(),
                need: self.min_frames(),
                frames,
            });
        }
        Ok(())
    }

    /// Blank-interleaved label of length `2·len + 1`.
    pub fn extended(&self) -> Vec<usize> {
        let mut ext = Vec::with_capacity(2 * self.len() + 1);
        ext.push(self.blank());
        for &s in &self.symbols {
            ext.push(s);
            ext.push(self.blank());
        }
        ext
    }
}

/// Tolerance on `log Σ exp(row)` for the log-distribution precondition.
pub const LOG_NORM_TOLERANCE: f64 = 1e-6;

fn check_log_probs(lp: &Tensor, labels: &LabelSequence) -> Result<()> {
    let (t_len, width) = lp.dims2();
    if width != labels.alphabet() + 1 {
        return Err(Error::shape("ctc_loss", lp.shape(), &[t_len, labels.alphabet() + 1]));
    }
    for t in 0..t_len {
        let row = lp.row_slice(t);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        if norm.abs() > LOG_NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "row {t} of CTC input is not a log-distribution (log-sum-exp {norm})"
            )));
        }
    }
    Ok(())
}

/// Predecessor states of `s` in the extended label.
fn predecessors(ext: &[usize], blank: usize, s: usize) -> impl Iterator<Item = usize> + '_ {
    let skip = s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    [Some(s), s.checked_sub(1), skip.then(|| s - 2)].into_iter().flatten()
}

/// Cells lying on at least one complete alignment: `live[t][s]`.
fn live_cells(ext: &[usize], blank: usize, t_len: usize) -> Vec<Vec<bool>> {
    let n = ext.len();
    let mut fwd = vec![vec![false; n]; t_len];
    fwd[0][0] = true;
    if n > 1 {
        fwd[0][1] = true;
    }
    for t in 1..t_len {
        for s in 0..n {
            fwd[t][s] = predecessors(ext, blank, s).any(|p| fwd[t - 1][p]);
        }
    }
    let mut bwd = vec![vec![false; n]; t_len];
    bwd[t_len - 1][n - 1] = true;
    if n > 1 {
        bwd[t_len - 1][n - 2] = true;
    }
    for t in (0..t_len - 1).rev() {
        for q in 0..n {
            if bwd[t + 1][q] {
                for p in predecessors(ext, blank, q) {
                    bwd[t][p] = true;
                }
            }
        }
    }
    fwd.iter()
        .zip(&bwd)
        .map(|(f, b)| f.iter().zip(b).map(|(x, y)| *x && *y).collect())
        .collect()
}

/// `-log P(labels | log_probs)`; `log_probs` is `T × (K+1)` with the blank
/// in the last column.
pub fn ctc_loss(g: &mut Graph<'_>, log_probs: Var, labels: &LabelSequence) -> Result<Var> {
    let t_len = g.value(log_probs).rows();
    check_log_probs(g.value(log_probs), labels)?;
    labels.check_feasible(t_len)?;
    let width = labels.alphabet() + 1;
    let blank = labels.blank();
    let ext = labels.extended();
    let live = live_cells(&ext, blank, t_len);

    let mut prev: Vec<Option<Var>> = vec![None; ext.len()];
    for t in 0..t_len {
        let mut cur: Vec<Option<Var>> = vec![None; ext.len()];
        for s in 0..ext.len() {
            if !live[t][s] {
                continue;
            }
            let emit = g.pick(log_probs, t * width + ext[s])?;
            if t == 0 {
                cur[s] = Some(emit);
                continue;
            }
            let terms: Vec<Var> = predecessors(&ext, blank, s).filter_map(|p| prev[p]).collect();
            let acc = match terms.as_slice() {
                [one] => *one,
                many => g.log_sum_exp(many)?,
            };
            cur[s] = Some(g.add(acc, emit)?);
        }
        prev = cur;
    }
    let n = ext.len();
    let ends: Vec<Var> = [prev[n - 1], prev[n - 2]].into_iter().flatten().collect();
    let total = match ends.as_slice() {
        [one] => *one,
        many => g.log_sum_exp(many)?,
    };
    g.scale(total, -1.0)
}

/// Collapse rule: merge runs of equal symbols, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = None;
    for &s in path {
        if Some(s) != last && s != blank {
            out.push(s);
        }
        last = Some(s);
    }
    out
}

pub const BRUTE_FORCE_MAX_FRAMES: usize = 8;
pub const BRUTE_FORCE_MAX_ALPHABET: usize = 4;

/// Exact `-log P` by enumerating every length-`T` path. `+inf` when no path
/// collapses to `labels`.
pub fn ctc_brute_force(log_probs: &Tensor, labels: &LabelSequence) -> Result<f64> {
    let (t_len, width) = log_probs.dims2();
    if t_len > BRUTE_FORCE_MAX_FRAMES || labels.alphabet() > BRUTE_FORCE_MAX_ALPHABET {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to T <= {BRUTE_FORCE_MAX_FRAMES}, K <= {BRUTE_FORCE_MAX_ALPHABET}"
        )));
    }
    if width != labels.alphabet() + 1 {
        return Err(Error::shape("ctc_brute_force", log_probs.shape(), &[t_len, labels.alphabet() + 1]));
    }
    let mut terms = Vec::new();
    let mut path = vec![0usize; t_len];
    let total = width.pow(t_len as u32);
    for code in 0..total {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % width;
            c /= width;
        }
        if collapse(&path, labels.blank()) == labels.symbols() {
            terms.push(path.iter().enumerate().map(|(t, s)| log_probs.get(t, *s)).sum::<f64>());
        }
    }
    if terms.is_empty() {
        return Ok(f64::INFINITY);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(-(m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()))
}

/// Per-frame argmax then collapse; may be empty.
pub fn ctc_greedy_decode(log_probs: &Tensor) -> Vec<usize> {
    let (t_len, width) = log_probs.dims2();
    let path: Vec<usize> = (0..t_len)
        .map(|t| {
            let row = log_probs.row_slice(t);
            (0..width).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect();
    collapse(&path, width - 1)
}

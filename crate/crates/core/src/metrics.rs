//! Detection metrics over verification scores: DET operating points, equal
//! error rate and normalized minimum detection cost.
//!
//! A trial is accepted when `score >= threshold`. Operating points carry
//! integer error counts so that rates and the EER crossing are computed
//! from exact rationals with a single final division.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::backend::TrialType;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { p_target: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::InvalidArgument(format!("p_target {} not in (0, 1)", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0 && self.c_miss.is_finite() && self.c_fa.is_finite()) {
            return Err(Error::InvalidArgument("detection costs must be positive and finite".into()));
        }
        Ok(())
    }

    /// Cost of the better trivial system; normalizes the DCF.
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa) / self.default_cost()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Targets scored below the threshold.
    pub misses: usize,
    /// Nontargets scored at or above the threshold.
    pub false_alarms: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    /// Ordered by increasing threshold, from `-inf` (accept all) to `+inf`
    /// (reject all).
    pub points: Vec<OperatingPoint>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl DetCurve {
    pub fn p_miss(&self, p: &OperatingPoint) -> f64 {
        p.misses as f64 / self.n_target as f64
    }

    pub fn p_fa(&self, p: &OperatingPoint) -> f64 {
        p.false_alarms as f64 / self.n_nontarget as f64
    }

    /// `threshold p_miss p_fa` per line, for external plotting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p.threshold, self.p_miss(p), self.p_fa(p));
        }
        out
    }
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyData(format!("{what} scores")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("detection scores"));
    }
    Ok(())
}

pub fn det_curve(targets: &[f64], nontargets: &[f64]) -> Result<DetCurve> {
    check_scores(targets, "target")?;
    check_scores(nontargets, "nontarget")?;
    let mut tar = targets.to_vec();
    let mut non = nontargets.to_vec();
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(OperatingPoint { threshold: f64::NEG_INFINITY, misses: 0, false_alarms: non.len() });
    // both cursors only move forward as the threshold rises
    let (mut below_t, mut below_n) = (0, 0);
    for &th in &thresholds {
        while below_t < tar.len() && tar[below_t] < th {
            below_t += 1;
        }
        while below_n < non.len() && non[below_n] < th {
            below_n += 1;
        }
        points.push(OperatingPoint { threshold: th, misses: below_t, false_alarms: non.len() - below_n });
    }
    points.push(OperatingPoint { threshold: f64::INFINITY, misses: tar.len(), false_alarms: 0 });
    Ok(DetCurve { points, n_target: tar.len(), n_nontarget: non.len() })
}

/// Linear interpolation of the first sign change of `P_miss − P_fa`.
pub fn eer(curve: &DetCurve) -> f64 {
    let nt = curve.n_target as i128;
    let nn = curve.n_nontarget as i128;
    // (P_miss − P_fa) · nt · nn
    let diff = |p: &OperatingPoint| p.misses as i128 * nn - p.false_alarms as i128 * nt;
    for pair in curve.points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (da, db) = (diff(a), diff(b));
        if da == 0 {
            return curve.p_miss(a);
        }
        if da < 0 && db > 0 {
            // P_miss at fraction -da/(db-da) along the segment
            let num = a.misses as i128 * (db - da) - da * (b.misses as i128 - a.misses as i128);
            let den = nt * (db - da);
            return num as f64 / den as f64;
        }
    }
    // the reject-all endpoint always has P_miss − P_fa = 1
    curve.p_miss(curve.points.last().expect("curve has sentinel points"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinDcf {
    pub value: f64,
    pub threshold: f64,
}

/// Minimum normalized DCF; ties resolve to the lowest threshold.
pub fn min_dcf(curve: &DetCurve, params: &DcfParams) -> MinDcf {
    let mut best = MinDcf { value: f64::INFINITY, threshold: f64::NEG_INFINITY };
    for p in &curve.points {
        let c = params.normalized_cost(curve.p_miss(p), curve.p_fa(p));
        if c < best.value {
            best = MinDcf { value: c, threshold: p.threshold };
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetMetrics {
    pub nontarget_type: TrialType,
    pub n_nontarget: usize,
    pub eer: f64,
    pub min_dcf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub eer: f64,
    pub min_dcf: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Per nontarget type: P_fa at the pooled minDCF threshold.
    pub p_fa_by_type: BTreeMap<TrialType, f64>,
    /// TC against each nontarget type alone, recomputed independently.
    pub subsets: Vec<SubsetMetrics>,
    pub params: DcfParams,
}

/// Pooled metrics with TC as the only target type.
pub fn evaluate(labeled: &[(TrialType, f64)], params: &DcfParams) -> Result<Report> {
    params.validate()?;
    let scores_of = |k: TrialType| -> Vec<f64> { labeled.iter().filter(|(t, _)| *t == k).map(|(_, s)| *s).collect() };
    let targets = scores_of(TrialType::TC);
    if targets.is_empty() {
        return Err(Error::EmptyData("no target (TC) trials".into()));
    }
    let nontargets: Vec<f64> = labeled.iter().filter(|(t, _)| !t.is_target()).map(|(_, s)| *s).collect();
    let curve = det_curve(&targets, &nontargets)?;
    let best = min_dcf(&curve, params);
    let mut p_fa_by_type = BTreeMap::new();
    let mut subsets = Vec::new();
    for kind in [TrialType::TW, TrialType::IC, TrialType::IW] {
        let non = scores_of(kind);
        if non.is_empty() {
            continue;
        }
        let fa = non.iter().filter(|&&s| s >= best.threshold).count();
        p_fa_by_type.insert(kind, fa as f64 / non.len() as f64);
        let sub = det_curve(&targets, &non)?;
        subsets.push(SubsetMetrics {
            nontarget_type: kind,
            n_nontarget: non.len(),
            eer: eer(&sub),
            min_dcf: min_dcf(&sub, params).value,
        });
    }
    Ok(Report {
        eer: eer(&curve),
        min_dcf: best.value,
        threshold: best.threshold,
        n_target: curve.n_target,
        n_nontarget: curve.n_nontarget,
        p_fa_by_type,
        subsets,
        params: *params,
    })
}

impl Report {
    pub fn subset(&self, kind: TrialType) -> Option<&SubsetMetrics> {
        self.subsets.iter().find(|s| s.nontarget_type == kind)
    }

    /// Machine-readable block; keys for absent trial types are omitted.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eer={}", self.eer);
        let _ = writeln!(out, "min_dcf={}", self.min_dcf);
        let _ = writeln!(out, "threshold={}", self.threshold);
        let _ = writeln!(out, "n_target={}", self.n_target);
        let _ = writeln!(out, "n_nontarget={}", self.n_nontarget);
        for (k, v) in &self.p_fa_by_type {
            let _ = writeln!(out, "p_fa_{}={}", k.as_str().to_lowercase(), v);
        }
        for s in &self.subsets {
            let tag = s.nontarget_type.as_str().to_lowercase();
            let _ = writeln!(out, "eer_tc_vs_{tag}={}", s.eer);
            let _ = writeln!(out, "min_dcf_tc_vs_{tag}={}", s.min_dcf);
        }
        let _ = writeln!(out, "p_target={}", self.params.p_target);
        let _ = writeln!(out, "c_miss={}", self.params.c_miss);
        let _ = writeln!(out, "c_fa={}", self.params.c_fa);
        out
    }

    /// Plain-text table followed by the key=value block.
    pub fn render(&self, system: &str) -> String {
        let mut rows = vec![TableRow { system: system.to_string(), min_dcf: self.min_dcf, eer: self.eer }];
        for s in &self.subsets {
            rows.push(TableRow {
                system: format!("  TC vs {}", s.nontarget_type),
                min_dcf: s.min_dcf,
                eer: s.eer,
            });
        }
        format!("{}\n{}", render_table(&rows), self.key_values())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub system: String,
    pub min_dcf: f64,
    /// As a rate in [0, 1]; rendered as a percentage.
    pub eer: f64,
}

/// Results table: minDCF to 4 decimals, EER as a percentage to 2.
pub fn render_table(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.system.len()).chain([6]).max().unwrap_or(6);
    let mut out = format!("{:<width$}  {:>7}  {:>6}\n", "System", "minDCF", "EER(%)");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>7.4}  {:>6.2}", r.system, r.min_dcf, r.eer * 100.0);
    }
    out
}

/// `system<TAB>min_dcf<TAB>eer_percent` lines.
pub fn parse_table_rows(text: &str, path: &str) -> Result<Vec<TableRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let err = |msg: String| Error::Parse { path: path.to_string(), line: i + 1, msg };
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", cols.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(format!("{s:?} is not a number")));
            Ok(TableRow { system: cols[0].to_string(), min_dcf: num(cols[1])?, eer: num(cols[2])? / 100.0 })
        })
        .collect()
}

//! Line-level detection metrics and fix-rate bookkeeping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::ops::Add;
use std::path::Path;

use num_traits::{FromPrimitive, Num, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::corpus::split_functions;
use crate::labels::{split_labels, AnnotatedFunction, CorrectionResult, DistortionType, LabelSet};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("model output has {model} functions, ground truth has {truth}")]
    FunctionCountMismatch { model: usize, truth: usize },
    #[error("function {function}: model output has {model} lines, ground truth has {truth}")]
    LineCountMismatch { function: usize, model: usize, truth: usize },
    #[error("function {function}, line {line}: {label}")]
    UnknownLabel { function: usize, line: usize, label: String },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("no flagged lines outside I4; fix rate undefined")]
    DenominatorZero,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One model line next to its ground-truth line. `function` and `line` are
/// 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinePair {
    pub function: usize,
    pub line: usize,
    pub model: String,
    pub truth: String,
}

pub fn align(model_text: &str, truth_text: &str) -> Result<Vec<LinePair>, EvalError> {
    let model = split_functions(model_text);
    let truth = split_functions(truth_text);
    if model.len() != truth.len() {
        return Err(EvalError::FunctionCountMismatch {
            model: model.len(),
            truth: truth.len(),
        });
    }
    let mut out = Vec::new();
    for (fi, (m, t)) in model.iter().zip(&truth).enumerate() {
        let ml: Vec<&str> = m.lines().collect();
        let tl: Vec<&str> = t.lines().collect();
        if ml.len() != tl.len() {
            return Err(EvalError::LineCountMismatch {
                function: fi + 1,
                model: ml.len(),
                truth: tl.len(),
            });
        }
        out.extend(ml.iter().zip(&tl).enumerate().map(|(li, (m, t))| LinePair {
            function: fi + 1,
            line: li + 1,
            model: m.to_string(),
            truth: t.to_string(),
        }));
    }
    Ok(out)
}

pub fn align_files(model: &Path, truth: &Path) -> Result<Vec<LinePair>, EvalError> {
    align(&fs::read_to_string(model)?, &fs::read_to_string(truth)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TypeCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub counts: ConfusionCounts,
    pub per_type: BTreeMap<DistortionType, TypeCounts>,
}

/// A line is positive when it carries any label. A positive model line on
/// a positive truth line is a true positive even if the types differ; the
/// per-type table shows such disagreements.
pub fn confusion_from_labels<'a, I>(pairs: I) -> Confusion
where
    I: IntoIterator<Item = (&'a LabelSet, &'a LabelSet)>,
{
    let mut c = Confusion::default();
    for (model, truth) in pairs {
        match (!model.is_empty(), !truth.is_empty()) {
            (true, true) => c.counts.tp += 1,
            (false, false) => c.counts.tn += 1,
            (true, false) => c.counts.fp += 1,
            (false, true) => c.counts.fn_ += 1,
        }
        for t in DistortionType::ALL {
            let e = c.per_type.entry(t).or_default();
            match (model.contains(&t), truth.contains(&t)) {
                (true, true) => e.tp += 1,
                (true, false) => e.fp += 1,
                (false, true) => e.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    c
}

pub fn confusion(pairs: &[LinePair]) -> Result<Confusion, EvalError> {
    let labeled = pairs
        .iter()
        .map(|p| {
            let err = |e: crate::labels::UnknownLabel| EvalError::UnknownLabel {
                function: p.function,
                line: p.line,
                label: e.0,
            };
            Ok((split_labels(&p.model).map_err(err)?.1, split_labels(&p.truth).map_err(err)?.1))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(confusion_from_labels(labeled.iter().map(|(m, t)| (m, t))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport<T> {
    pub counts: ConfusionCounts,
    pub accuracy: T,
    /// `None` when nothing was predicted positive.
    pub precision: Option<T>,
    pub per_type: BTreeMap<DistortionType, TypeCounts>,
}

fn lift<T: FromPrimitive>(x: u64) -> T {
    T::from_u64(x).expect("count representable in scalar type")
}

/// Accuracy (tp+tn)/total and precision tp/(tp+fp).
pub fn metrics<T>(counts: ConfusionCounts) -> Result<(T, Option<T>), EvalError>
where
    T: Num + FromPrimitive + Copy,
{
    let total = counts.total();
    if total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let acc = lift::<T>(counts.tp + counts.tn) / lift(total);
    let pr = (counts.tp + counts.fp > 0).then(|| lift::<T>(counts.tp) / lift(counts.tp + counts.fp));
    Ok((acc, pr))
}

pub fn report<T>(c: &Confusion) -> Result<EvalReport<T>, EvalError>
where
    T: Num + FromPrimitive + Copy,
{
    let (accuracy, precision) = metrics(c.counts)?;
    Ok(EvalReport {
        counts: c.counts,
        accuracy,
        precision,
        per_type: c.per_type.clone(),
    })
}

pub fn evaluate<T>(model_text: &str, truth_text: &str) -> Result<EvalReport<T>, EvalError>
where
    T: Num + FromPrimitive + Copy,
{
    report(&confusion(&align(model_text, truth_text)?)?)
}

fn fmt_opt<T: ToPrimitive>(v: &Option<T>) -> String {
    match v.as_ref().and_then(ToPrimitive::to_f64) {
        Some(x) => format!("{x:.4}"),
        None => "undefined".into(),
    }
}

/// Plain-text table of an evaluation report.
pub fn render_table<T: ToPrimitive>(r: &EvalReport<T>) -> String {
    let mut s = String::new();
    let c = r.counts;
    let _ = writeln!(s, "lines      {}", c.total());
    let _ = writeln!(s, "TP {}  TN {}  FP {}  FN {}", c.tp, c.tn, c.fp, c.fn_);
    let _ = writeln!(s, "Acc        {:.4}", r.accuracy.to_f64().unwrap_or(f64::NAN));
    let _ = writeln!(s, "Pr         {}", fmt_opt(&r.precision));
    let _ = writeln!(s, "\ntype  TP    FP    FN");
    for (t, k) in &r.per_type {
        let _ = writeln!(s, "{t:<5} {:<5} {:<5} {}", k.tp, k.fp, k.fn_);
    }
    s
}

/// Fixed-rate bookkeeping for one function or a whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixCounts {
    pub flagged_lines: u64,
    pub flagged_i4: u64,
    pub fixed_marked: u64,
}

impl FixCounts {
    /// Raw counts, without the zero-denominator check.
    pub fn observe(detection: &AnnotatedFunction, correction: &CorrectionResult) -> Self {
        Self {
            flagged_lines: detection.labels().len() as u64,
            flagged_i4: detection.lines_with(DistortionType::I4).len() as u64,
            fixed_marked: correction.fixed_indices.len() as u64,
        }
    }

    /// Flagged lines outside I4; I4 lines are deleted rather than fixed.
    pub fn denominator(&self) -> u64 {
        self.flagged_lines - self.flagged_i4
    }

    pub fn fix_rate<T>(&self) -> Result<T, EvalError>
    where
        T: Num + FromPrimitive + Copy,
    {
        match self.denominator() {
            0 => Err(EvalError::DenominatorZero),
            d => Ok(lift::<T>(self.fixed_marked) / lift(d)),
        }
    }
}

impl Add for FixCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            flagged_lines: self.flagged_lines + o.flagged_lines,
            flagged_i4: self.flagged_i4 + o.flagged_i4,
            fixed_marked: self.fixed_marked + o.fixed_marked,
        }
    }
}

pub fn fix_counts(detection: &AnnotatedFunction, correction: &CorrectionResult) -> Result<FixCounts, EvalError> {
    let c = FixCounts::observe(detection, correction);
    if c.denominator() == 0 {
        return Err(EvalError::DenominatorZero);
    }
    if c.fixed_marked > c.denominator() {
        log::warn!(
            "{} lines marked fixed but only {} flagged outside I4",
            c.fixed_marked,
            c.denominator()
        );
    }
    Ok(c)
}

/// Longest common subsequence matching; returns index pairs (0-based) in
/// increasing order.
pub fn lcs_pairs<A, B>(a: &[A], b: &[B], eq: impl Fn(&A, &B) -> bool) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if eq(&a[i], &b[j]) {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < n && j < m {
        if eq(&a[i], &b[j]) {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Whitespace-insensitive line comparison key.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorksheetRow {
    pub function: String,
    pub line_no: usize,
    pub original: String,
    pub corrected: String,
    pub detected_types: String,
    pub manual_verdict: String,
}

/// Pairs every `//fixed` output line with the input line it most likely
/// replaces, for manual review.
///
/// Unchanged lines anchor the alignment; inside each gap between anchors,
/// fixed lines take the remaining non-I4 input lines in order.
pub fn worksheet_rows(function: &str, detection: &AnnotatedFunction, correction: &CorrectionResult) -> Vec<WorksheetRow> {
    let inputs: Vec<String> = detection.function.lines.iter().map(|l| normalize_ws(&l.text)).collect();
    let outputs: Vec<(String, bool)> = correction
        .corrected_lines
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), correction.fixed_indices.contains(&(i + 1))))
        .collect();
    let anchors = lcs_pairs(&inputs, &outputs, |a, (b, fixed)| !fixed && *a == normalize_ws(b));
    let mut rows = Vec::new();
    let mut prev = (0usize, 0usize);
    let ends = anchors.iter().copied().chain(std::iter::once((inputs.len(), outputs.len())));
    for (ai, aj) in ends {
        let mut candidates = (prev.0..ai)
            .filter(|i| {
                detection
                    .labels_at(i + 1)
                    .is_none_or(|s| !s.contains(&DistortionType::I4))
            })
            .collect::<Vec<_>>()
            .into_iter();
        for (j, (text, fixed)) in outputs.iter().enumerate().take(aj).skip(prev.1) {
            if !fixed {
                continue;
            }
            let src = candidates.next();
            rows.push(WorksheetRow {
                function: function.to_string(),
                line_no: j + 1,
                original: src
                    .map(|i| detection.function.lines[i].text.clone())
                    .unwrap_or_default(),
                corrected: text.clone(),
                detected_types: src
                    .and_then(|i| detection.labels_at(i + 1))
                    .map(|s| s.iter().map(|t| t.code()).collect::<Vec<_>>().join(";"))
                    .unwrap_or_default(),
                manual_verdict: String::new(),
            });
        }
        prev = (ai + 1, aj + 1);
    }
    rows
}

pub fn write_worksheet(path: &Path, rows: &[WorksheetRow]) -> Result<(), EvalError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["function", "line_no", "original", "corrected", "detected_types", "manual_verdict"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudocode::parse_function;
    use num_rational::Ratio;
    use proptest::prelude::*;
    use DistortionType::*;

    #[test]
    fn align_examples() {
        let text = "a;\nb; // I4\n/////\nc;";
        assert_eq!(align(text, text).unwrap().len(), 3);
        assert!(matches!(
            align("a;", "a;\n/////\nb;"),
            Err(EvalError::FunctionCountMismatch { model: 1, truth: 2 })
        ));
        match align("a;\n/////\nb;", "a;\n/////\nb;\nc;") {
            Err(EvalError::LineCountMismatch { function, .. }) => assert_eq!(function, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constructed_confusion() {
        // 8 TP, 80 TN, 2 FP, 10 FN
        let mut model = Vec::new();
        let mut truth = Vec::new();
        let push = |m: &str, t: &str, n: usize, model: &mut Vec<String>, truth: &mut Vec<String>| {
            for i in 0..n {
                model.push(format!("x{i} = {i};{m}"));
                truth.push(format!("x{i} = {i};{t}"));
            }
        };
        push(" // I4", " // I4", 8, &mut model, &mut truth);
        push("", "", 80, &mut model, &mut truth);
        push(" // I1", "", 2, &mut model, &mut truth);
        push("", " // I3", 10, &mut model, &mut truth);
        let c = confusion(&align(&model.join("\n"), &truth.join("\n")).unwrap()).unwrap();
        assert_eq!(c.counts, ConfusionCounts::new(8, 80, 2, 10));
        assert_eq!(c.per_type[&I4], TypeCounts { tp: 8, fp: 0, fn_: 0 });
        assert_eq!(c.per_type[&I3].fn_, 10);
        let r: EvalReport<Ratio<u64>> = report(&c).unwrap();
        assert_eq!(r.accuracy, Ratio::new(88, 100));
        assert_eq!(r.precision, Some(Ratio::new(8, 10)));
    }

    #[test]
    fn degenerate_counts() {
        let (a, p) = metrics::<f64>(ConfusionCounts::new(5, 5, 0, 0)).unwrap();
        assert_eq!((a, p), (1.0, Some(1.0)));
        let (_, p) = metrics::<f64>(ConfusionCounts::new(0, 10, 0, 0)).unwrap();
        assert_eq!(p, None);
        assert!(matches!(metrics::<f64>(ConfusionCounts::default()), Err(EvalError::EmptyEvaluation)));
    }

    #[test]
    fn type_mismatch_counts_as_positive_match() {
        let m = LabelSet::from([I1]);
        let t = LabelSet::from([I3]);
        let c = confusion_from_labels([(&m, &t)]);
        assert_eq!(c.counts.tp, 1);
        assert_eq!(c.per_type[&I1].fp, 1);
        assert_eq!(c.per_type[&I3].fn_, 1);
    }

    #[test]
    fn all_negative_and_all_positive() {
        let e = LabelSet::new();
        let p = LabelSet::from([I2]);
        assert_eq!(confusion_from_labels(vec![(&e, &e); 7]).counts.tn, 7);
        assert_eq!(confusion_from_labels(vec![(&p, &e); 7]).counts.fp, 7);
    }

    fn annotated(n: usize, labels: &[(usize, &[DistortionType])]) -> AnnotatedFunction {
        let text: Vec<String> = (1..=n).map(|i| format!("v{i} = {i};")).collect();
        let mut a = AnnotatedFunction::new(parse_function(&text.join("\n")).unwrap());
        for (l, ts) in labels {
            a.set(*l, ts.iter().copied().collect());
        }
        a
    }

    fn fixed_result(n: usize) -> CorrectionResult {
        CorrectionResult {
            corrected_lines: vec!["x;".to_string(); n],
            fixed_indices: (1..=n).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn fix_rate_excludes_i4() {
        let labels: Vec<(usize, &[DistortionType])> = (1..=10)
            .map(|i| (i, if i <= 2 { &[I4][..] } else { &[I1][..] }))
            .collect();
        let a = annotated(12, &labels);
        let c = fix_counts(&a, &fixed_result(6)).unwrap();
        assert_eq!((c.flagged_lines, c.flagged_i4, c.denominator()), (10, 2, 8));
        assert_eq!(c.fix_rate::<Ratio<u64>>().unwrap(), Ratio::new(3, 4));
        assert_eq!(c.fix_rate::<f64>().unwrap(), 0.75);
        let full = FixCounts { fixed_marked: 8, ..c };
        assert_eq!(full.fix_rate::<f64>().unwrap(), 1.0);
        let only_i4 = annotated(3, &[(1, &[I4]), (2, &[I4])]);
        assert!(matches!(fix_counts(&only_i4, &fixed_result(0)), Err(EvalError::DenominatorZero)));
    }

    #[test]
    fn lcs_basic() {
        let a = ["a", "b", "c", "d"];
        let b = ["a", "c", "x", "d"];
        assert_eq!(lcs_pairs(&a, &b, |x, y| x == y), vec![(0, 0), (2, 1), (3, 3)]);
    }

    #[test]
    fn worksheet_pairs_fixed_lines() {
        let a = annotated(4, &[(2, &[I1]), (3, &[I4])]);
        let out = CorrectionResult {
            corrected_lines: ["v1 = 1;", "obj->f = 2;", "v4 = 4;"].iter().map(|s| s.to_string()).collect(),
            fixed_indices: [2].into(),
            ..Default::default()
        };
        let rows = worksheet_rows("f0", &a, &out);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].line_no, 2);
        assert_eq!(rows[0].original, "v2 = 2;");
        assert_eq!(rows[0].corrected, "obj->f = 2;");
        assert_eq!(rows[0].detected_types, "I1");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfr.csv");
        write_worksheet(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("function,line_no,original,corrected,detected_types,manual_verdict\n"));
    }

    proptest! {
        #[test]
        fn confusion_partitions(labels in prop::collection::vec((0u8..3, 0u8..3), 1..200)) {
            let sets: Vec<(LabelSet, LabelSet)> = labels
                .iter()
                .map(|(m, t)| {
                    let f = |k: u8| if k == 0 { LabelSet::new() } else { LabelSet::from([DistortionType::ALL[k as usize]]) };
                    (f(*m), f(*t))
                })
                .collect();
            let c = confusion_from_labels(sets.iter().map(|(a, b)| (a, b)));
            prop_assert_eq!(c.counts.total(), labels.len() as u64);
        }

        #[test]
        fn fix_rate_never_counts_i4(n_i4 in 0usize..5, n_other in 1usize..6, fixed in 0usize..6) {
            let mut labels: Vec<(usize, &[DistortionType])> = Vec::new();
            for i in 0..n_i4 { labels.push((i + 1, &[I4][..])); }
            for i in 0..n_other { labels.push((n_i4 + i + 1, &[I2][..])); }
            let a = annotated(n_i4 + n_other, &labels);
            let c = fix_counts(&a, &fixed_result(fixed)).unwrap();
            prop_assert_eq!(c.denominator(), n_other as u64);
        }
    }
}

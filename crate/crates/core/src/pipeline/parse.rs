//! Reading model answers back into labels and corrections.

use std::collections::{BTreeMap, BTreeSet};

use crate::evaluation::{lcs_pairs, normalize_ws};
use crate::labels::{split_fixed, split_labels, AnnotatedFunction, CorrectionResult, DistortionType, LabelSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OutputParseError {
    #[error("expected {expected} output lines, got {got}")]
    LineCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    UnknownLabel(#[from] crate::labels::UnknownLabel),
    #[error("line {line} was altered: expected `{expected}`, got `{got}`")]
    CodeAltered { line: usize, expected: String, got: String },
    #[error("model returned no code")]
    EmptyOutput,
}

/// Model output lines without a surrounding Markdown fence.
fn unfenced(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.lines().collect();
    let first = lines.iter().position(|l| !l.trim().is_empty());
    if let Some(i) = first {
        if lines[i].trim_start().starts_with("```") {
            lines.drain(..=i);
            if let Some(j) = lines.iter().rposition(|l| !l.trim().is_empty()) {
                if lines[j].trim() == "```" {
                    lines.truncate(j);
                }
            }
        }
    }
    lines
}

fn trim_blank_edges<'a>(lines: &[&'a str]) -> Vec<&'a str> {
    let s = lines.iter().position(|l| !l.trim().is_empty());
    let e = lines.iter().rposition(|l| !l.trim().is_empty());
    match (s, e) {
        (Some(s), Some(e)) => lines[s..=e].to_vec(),
        _ => Vec::new(),
    }
}

/// Labels per input line (1-based, relative to `expected`).
///
/// Strict mode demands one output line per input line with unchanged code
/// (whitespace aside). Lenient mode aligns output to input by content and
/// keeps labels only from lines it can match.
pub fn parse_detection_output(
    model_text: &str,
    expected: &[&str],
    strict: bool,
) -> Result<BTreeMap<usize, LabelSet>, OutputParseError> {
    let mut out = unfenced(model_text);
    if out.len() != expected.len() {
        let trimmed = trim_blank_edges(&out);
        if trimmed.len() == expected.len() || !strict {
            out = trimmed;
        }
    }
    let parsed: Vec<(&str, LabelSet)> = out.iter().map(|l| split_labels(l)).collect::<Result<_, _>>()?;
    let mut labels = BTreeMap::new();
    if strict {
        if parsed.len() != expected.len() {
            return Err(OutputParseError::LineCountMismatch {
                expected: expected.len(),
                got: parsed.len(),
            });
        }
        for (i, ((code, set), exp)) in parsed.into_iter().zip(expected).enumerate() {
            if normalize_ws(code) != normalize_ws(exp) {
                return Err(OutputParseError::CodeAltered {
                    line: i + 1,
                    expected: exp.to_string(),
                    got: code.to_string(),
                });
            }
            if !set.is_empty() {
                labels.insert(i + 1, set);
            }
        }
    } else {
        if parsed.iter().all(|(c, _)| c.trim().is_empty()) && expected.iter().any(|e| !e.trim().is_empty()) {
            return Err(OutputParseError::EmptyOutput);
        }
        let exp: Vec<String> = expected.iter().map(|e| normalize_ws(e)).collect();
        let got: Vec<String> = parsed.iter().map(|(c, _)| normalize_ws(c)).collect();
        for (i, j) in lcs_pairs(&exp, &got, |a, b| a == b) {
            if !parsed[j].1.is_empty() {
                labels.insert(i + 1, parsed[j].1.clone());
            }
        }
    }
    Ok(labels)
}

/// Reads corrected code with `//fixed` markers and checks which I4-labeled
/// input lines were dropped.
pub fn parse_correction_output(model_text: &str, input: &AnnotatedFunction) -> Result<CorrectionResult, OutputParseError> {
    let lines = trim_blank_edges(&unfenced(model_text));
    let i4 = input.lines_with(DistortionType::I4);
    // an empty answer is only plausible when every code line was redundant
    let all_redundant = input.function.lines.iter().all(|l| l.is_blank() || i4.contains(&l.index));
    if lines.is_empty() && !all_redundant {
        return Err(OutputParseError::EmptyOutput);
    }
    let mut result = CorrectionResult::default();
    for (i, l) in lines.iter().enumerate() {
        let (code, fixed) = split_fixed(l);
        // some models echo the labels back; they are not part of the code
        let code = split_labels(code).map(|(c, _)| c).unwrap_or(code);
        result.corrected_lines.push(code.to_string());
        if fixed {
            result.fixed_indices.insert(i + 1);
        }
    }
    let inputs: Vec<String> = input.function.lines.iter().map(|l| normalize_ws(&l.text)).collect();
    let outputs: Vec<String> = result.corrected_lines.iter().map(|l| normalize_ws(l)).collect();
    let kept: BTreeSet<usize> = lcs_pairs(&inputs, &outputs, |a, b| a == b)
        .into_iter()
        .map(|(i, _)| i + 1)
        .collect();
    for line in i4 {
        if kept.contains(&line) {
            result.i4_retained.push(line);
        } else {
            result.removed_input_indices.insert(line);
        }
    }
    if !result.i4_retained.is_empty() {
        log::warn!("I4 lines kept after correction: {:?}", result.i4_retained);
    }
    Ok(result)
}

/// Splits labeled function text (detection output) into the function and
/// its labels.
pub fn split_labeled_text(text: &str) -> Result<(String, BTreeMap<usize, LabelSet>), OutputParseError> {
    let mut code = Vec::new();
    let mut labels = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        let (c, set) = split_labels(l)?;
        code.push(c);
        if !set.is_empty() {
            labels.insert(i + 1, set);
        }
    }
    Ok((code.join("\n"), labels))
}

//! Distortion labels and the in-band `// I<k>` / `//fixed` line markers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::pseudocode::DecompiledFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistortionType {
    I1,
    I2,
    I3,
    I4,
    I5,
    I6,
}

impl DistortionType {
    pub const ALL: [DistortionType; 6] = [
        DistortionType::I1,
        DistortionType::I2,
        DistortionType::I3,
        DistortionType::I4,
        DistortionType::I5,
        DistortionType::I6,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DistortionType::I1 => "I1",
            DistortionType::I2 => "I2",
            DistortionType::I3 => "I3",
            DistortionType::I4 => "I4",
            DistortionType::I5 => "I5",
            DistortionType::I6 => "I6",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            DistortionType::I1 => "Non-inertial dereferencing",
            DistortionType::I2 => "Character and string literal representation",
            DistortionType::I3 => "Control flow obfuscation",
            DistortionType::I4 => "Redundant code",
            DistortionType::I5 => "Unexpected returns",
            DistortionType::I6 => "Non-type symbols",
        }
    }

    pub fn from_number(k: u32) -> Option<Self> {
        Self::ALL.get((k as usize).checked_sub(1)?).copied()
    }
}

impl fmt::Display for DistortionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown distortion label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for DistortionType {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t
            .strip_prefix('I')
            .or_else(|| t.strip_prefix('i'))
            .ok_or_else(|| UnknownLabel(t.to_string()))?;
        digits
            .parse::<u32>()
            .ok()
            .and_then(Self::from_number)
            .ok_or_else(|| UnknownLabel(t.to_string()))
    }
}

pub type LabelSet = BTreeSet<DistortionType>;

static LABEL_LIST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?i)\s*i\d+(?:\s*[,\s]\s*i\d+)*\s*[,;.]?\s*$").unwrap());
static LABEL_ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)i\d+").unwrap());
static FIXED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)//\s*fixed\s*$").unwrap());

/// Splits a trailing `// I<k>[, I<m> ...]` comment off a line.
///
/// Returns the code before the comment (trailing whitespace removed) and the
/// labels. A trailing comment that is not a pure label list leaves the line
/// unlabeled; a label list naming an index outside 1..=6 is an error.
pub fn split_labels(line: &str) -> Result<(&str, LabelSet), UnknownLabel> {
    let Some(pos) = line.rfind("//") else {
        return Ok((line, LabelSet::new()));
    };
    let comment = &line[pos + 2..];
    if !LABEL_LIST.is_match(comment) {
        return Ok((line, LabelSet::new()));
    }
    let labels = LABEL_ITEM
        .find_iter(comment)
        .map(|m| m.as_str().parse())
        .collect::<Result<LabelSet, _>>()?;
    Ok((line[..pos].trim_end(), labels))
}

/// Appends ` // I1, I4` to `code`; returns it unchanged for an empty set.
pub fn render_labels(code: &str, labels: &LabelSet) -> String {
    if labels.is_empty() {
        return code.to_string();
    }
    let list: Vec<&str> = labels.iter().map(|l| l.code()).collect();
    format!("{code} // {}", list.join(", "))
}

/// Strips a trailing `//fixed` (or `// fixed`) marker.
pub fn split_fixed(line: &str) -> (&str, bool) {
    match FIXED.find(line) {
        Some(m) => (line[..m.start()].trim_end(), true),
        None => (line, false),
    }
}

/// A function with per-line distortion labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFunction {
    pub function: DecompiledFunction,
    labels: BTreeMap<usize, LabelSet>,
}

impl AnnotatedFunction {
    pub fn new(function: DecompiledFunction) -> Self {
        Self {
            function,
            labels: BTreeMap::new(),
        }
    }

    /// Sets labels for a 1-based line. Empty sets clear the entry.
    ///
    /// # Panics
    /// If `line` is not a line of the function.
    pub fn set(&mut self, line: usize, labels: LabelSet) {
        assert!(
            (1..=self.function.len()).contains(&line),
            "line {line} outside function of {} lines",
            self.function.len()
        );
        if labels.is_empty() {
            self.labels.remove(&line);
        } else {
            self.labels.insert(line, labels);
        }
    }

    pub fn labels(&self) -> &BTreeMap<usize, LabelSet> {
        &self.labels
    }

    pub fn labels_at(&self, line: usize) -> Option<&LabelSet> {
        self.labels.get(&line)
    }

    pub fn is_unlabeled(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn lines_with(&self, t: DistortionType) -> BTreeSet<usize> {
        self.labels
            .iter()
            .filter(|(_, s)| s.contains(&t))
            .map(|(i, _)| *i)
            .collect()
    }

    /// The function text with labels appended to labeled lines.
    pub fn render(&self) -> String {
        self.function
            .lines
            .iter()
            .map(|l| match self.labels.get(&l.index) {
                Some(set) => render_labels(&l.text, set),
                None => l.text.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parsed correction output. Line numbers are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorrectionResult {
    /// Output lines with `//fixed` markers removed.
    pub corrected_lines: Vec<String>,
    /// Output lines that carried a `//fixed` marker.
    pub fixed_indices: BTreeSet<usize>,
    /// I4-labeled input lines that no longer appear in the output.
    pub removed_input_indices: BTreeSet<usize>,
    /// I4-labeled input lines that survived correction.
    pub i4_retained: Vec<usize>,
}

impl CorrectionResult {
    /// Output text with `//fixed` markers restored.
    pub fn render(&self) -> String {
        self.corrected_lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if self.fixed_indices.contains(&(i + 1)) {
                    format!("{l} //fixed")
                } else {
                    l.clone()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

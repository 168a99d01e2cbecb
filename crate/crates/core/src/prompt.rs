//! Prompt assembly for redundancy analysis, detection, correction and the
//! baseline variants.
//!
//! Wording lives in the `templates/` data files. The built-in copies are
//! compiled in; [`Templates::load_dir`] overrides any of them from disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::graph::DependencyMap;
use crate::labels::AnnotatedFunction;
use crate::store::RetrievalHit;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("dependency map is empty")]
    EmptyDependencyMap,
    #[error("code block is empty")]
    EmptyCode,
    #[error("function has no labeled lines")]
    NothingToCorrect,
    #[error("template placeholder `{{{{{0}}}}}` has no value")]
    MissingPlaceholder(String),
    #[error("cannot read template {name}: {source}")]
    Io { name: String, source: std::io::Error },
}

/// Template file names, without the `.txt` suffix.
const TEMPLATE_NAMES: [&str; 12] = [
    "role",
    "definitions",
    "criteria",
    "redundancy",
    "detection",
    "correction",
    "guidance",
    "zero_shot",
    "example_1",
    "example_2",
    "example_3",
    // reserved for a custom format reminder used on re-prompts
    "reminder",
];

const BUILTIN: [(&str, &str); 11] = [
    ("role", include_str!("../templates/role.txt")),
    ("definitions", include_str!("../templates/definitions.txt")),
    ("criteria", include_str!("../templates/criteria.txt")),
    ("redundancy", include_str!("../templates/redundancy.txt")),
    ("detection", include_str!("../templates/detection.txt")),
    ("correction", include_str!("../templates/correction.txt")),
    ("guidance", include_str!("../templates/guidance.txt")),
    ("zero_shot", include_str!("../templates/zero_shot.txt")),
    ("example_1", include_str!("../templates/example_1.txt")),
    ("example_2", include_str!("../templates/example_2.txt")),
    ("example_3", include_str!("../templates/example_3.txt")),
];

const DEFAULT_REMINDER: &str = "Your previous answer could not be parsed. Reply with exactly one output line per input line, in the same order, and put labels only in a trailing `// I<k>` comment.";

/// Replaces every `{{name}}` in `template` with its value.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let name = after[..end].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        let mut texts: BTreeMap<String, String> = BUILTIN
            .iter()
            .map(|(k, v)| (k.to_string(), v.trim_end().to_string()))
            .collect();
        texts.insert("reminder".into(), DEFAULT_REMINDER.into());
        Self { texts }
    }
}

impl Templates {
    /// Built-in templates with any `<name>.txt` found in `dir` taking over.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut t = Self::default();
        for name in TEMPLATE_NAMES {
            let path = dir.as_ref().join(format!("{name}.txt"));
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    name: name.to_string(),
                    source,
                })?;
                t.texts.insert(name.to_string(), text.trim_end().to_string());
            }
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> &str {
        self.texts.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn examples(&self) -> [&str; 3] {
        [self.get("example_1"), self.get("example_2"), self.get("example_3")]
    }

    pub fn reminder(&self) -> &str {
        self.get("reminder")
    }
}

/// Which job a prompt asks for; recoverable from rendered text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTask {
    Redundancy,
    Detection,
    Correction,
    ZeroShot,
}

impl PromptTask {
    pub fn marker(self) -> &'static str {
        match self {
            PromptTask::Redundancy => "Task: identify redundant variables.",
            PromptTask::Detection => "Task: detect distortions.",
            PromptTask::Correction => "Task: correct distortions.",
            PromptTask::ZeroShot => "Task: repair the code.",
        }
    }

    /// The task named in a rendered prompt, if any.
    pub fn of(prompt: &str) -> Option<Self> {
        [
            PromptTask::Redundancy,
            PromptTask::Detection,
            PromptTask::Correction,
            PromptTask::ZeroShot,
        ]
        .into_iter()
        .find(|t| prompt.lines().any(|l| l.trim() == t.marker()))
    }
}

pub const SECTION_ROLE: &str = "## Role";
pub const SECTION_DEFINITIONS: &str = "## Distortion Types";
pub const SECTION_EXAMPLES: &str = "## Examples";
pub const SECTION_CONTEXT: &str = "## Context";
pub const SECTION_CODE: &str = "## Code";
pub const SECTION_OUTPUT: &str = "## Output Format";
pub const EXAMPLE_HEADER: &str = "### Example";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub task: PromptTask,
    pub role_preamble: String,
    pub distortion_definitions: String,
    pub examples_block: String,
    pub context_block: String,
    pub code_block: String,
    pub output_instructions: String,
}

impl PromptBundle {
    /// Sections in fixed order; empty ones are omitted.
    pub fn render(&self) -> String {
        let code = format!("```c\n{}\n```", self.code_block);
        let sections = [
            (SECTION_ROLE, self.role_preamble.as_str()),
            (SECTION_DEFINITIONS, self.distortion_definitions.as_str()),
            (SECTION_EXAMPLES, self.examples_block.as_str()),
            (SECTION_CONTEXT, self.context_block.as_str()),
            (SECTION_CODE, code.as_str()),
            (SECTION_OUTPUT, self.output_instructions.as_str()),
        ];
        sections
            .iter()
            .filter(|(_, body)| !body.is_empty())
            .map(|(h, body)| format!("{h}\n{body}"))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Text of the fenced code section of a rendered prompt.
    pub fn extract_code(prompt: &str) -> Option<&str> {
        let start = prompt.find(&format!("{SECTION_CODE}\n```c\n"))? + SECTION_CODE.len() + 6;
        let len = prompt[start..].find("\n```")?;
        Some(&prompt[start..start + len])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    ZeroShot,
    WithDefinitions,
    WithExamples,
}

pub struct PromptForge {
    pub templates: Templates,
}

impl Default for PromptForge {
    fn default() -> Self {
        Self::new(Templates::default())
    }
}

fn dependency_listing(map: &DependencyMap) -> String {
    let mut out = Vec::new();
    for var in map.variables() {
        out.push(format!("Variable {var}:"));
        let texts = map.texts(var);
        if texts.is_empty() {
            out.push("  (no dependent statements)".to_string());
        }
        out.extend(texts.into_iter().map(|t| format!("  {t}")));
    }
    out.join("\n")
}

impl PromptForge {
    pub fn new(templates: Templates) -> Self {
        Self { templates }
    }

    fn bundle(&self, task: PromptTask, code: &str) -> Result<PromptBundle, PromptError> {
        if code.trim().is_empty() {
            return Err(PromptError::EmptyCode);
        }
        Ok(PromptBundle {
            task,
            role_preamble: self.templates.get("role").to_string(),
            distortion_definitions: String::new(),
            examples_block: String::new(),
            context_block: String::new(),
            code_block: code.to_string(),
            output_instructions: String::new(),
        })
    }

    fn examples_block(&self) -> String {
        self.templates
            .examples()
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{EXAMPLE_HEADER} {}\n{e}", i + 1))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Variables with their dependent statements and the redundancy
    /// criteria; the answer is a comma-separated name list.
    pub fn redundancy(&self, map: &DependencyMap) -> Result<PromptBundle, PromptError> {
        if map.is_empty() {
            return Err(PromptError::EmptyDependencyMap);
        }
        let mut b = self.bundle(PromptTask::Redundancy, &dependency_listing(map))?;
        b.context_block = self.templates.get("criteria").to_string();
        b.output_instructions = self.templates.get("redundancy").to_string();
        Ok(b)
    }

    pub fn detection<T: Float>(
        &self,
        code: &str,
        redundant_vars: &[String],
        retrieved: &[RetrievalHit<T>],
    ) -> Result<PromptBundle, PromptError> {
        let mut b = self.bundle(PromptTask::Detection, code)?;
        b.distortion_definitions = self.templates.get("definitions").to_string();
        let mut ctx = Vec::new();
        if !redundant_vars.is_empty() {
            ctx.push(format!("Variables judged redundant: {}", redundant_vars.join(", ")));
        }
        if !retrieved.is_empty() {
            let mut seen = std::collections::BTreeSet::new();
            let lines: Vec<String> = retrieved
                .iter()
                .filter(|h| seen.insert(h.record.id))
                .map(|h| h.record.annotated())
                .collect();
            ctx.push(format!(
                "Similar lines from the distortion database, with their labels:\n{}",
                lines.join("\n")
            ));
        }
        b.context_block = ctx.join("\n\n");
        b.output_instructions = self.templates.get("detection").to_string();
        Ok(b)
    }

    pub fn correction(&self, annotated: &AnnotatedFunction) -> Result<PromptBundle, PromptError> {
        if annotated.is_unlabeled() {
            return Err(PromptError::NothingToCorrect);
        }
        let mut b = self.bundle(PromptTask::Correction, &annotated.render())?;
        b.distortion_definitions = self.templates.get("definitions").to_string();
        b.output_instructions = fill(
            self.templates.get("correction"),
            &[("guidance", self.templates.get("guidance"))],
        )?;
        Ok(b)
    }

    pub fn baseline(&self, kind: BaselineKind, code: &str) -> Result<PromptBundle, PromptError> {
        match kind {
            BaselineKind::ZeroShot => {
                let mut b = self.bundle(PromptTask::ZeroShot, code)?;
                b.output_instructions = self.templates.get("zero_shot").to_string();
                Ok(b)
            }
            BaselineKind::WithDefinitions => self.detection::<f64>(code, &[], &[]),
            BaselineKind::WithExamples => {
                let mut b = self.detection::<f64>(code, &[], &[])?;
                b.examples_block = self.examples_block();
                Ok(b)
            }
        }
    }
}

/// Reads a redundancy-prompt answer: comma/whitespace separated identifiers,
/// `none` for an empty list. Backticks and a trailing period are tolerated.
pub fn parse_redundant_variables(answer: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in answer.split(|c: char| c == ',' || c.is_whitespace()) {
        let w = raw.trim_matches(|c: char| c == '`' || c == '.' || c == '"' || c == '\'');
        let is_ident = w
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && w.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if is_ident && !w.eq_ignore_ascii_case("none") && !out.iter().any(|x| x == w) {
            out.push(w.to_string());
        }
    }
    out
}

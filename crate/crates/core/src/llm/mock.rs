//! Offline provider: either an oracle that answers from ground-truth
//! markers embedded in the code, or a JSON rule script.
//!
//! Fixture code carries its expected labels in a block comment such as
//! `v5 = v4; /* truth: I4 */`. The lexer ignores comments, so the marker does
//! not influence analysis, but the oracle can read it back out of a prompt.

use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use super::{LlmError, LlmRequest, Provider, ProviderReply};
use crate::labels::{render_labels, split_labels, DistortionType, LabelSet};
use crate::prompt::{PromptBundle, PromptTask};

static TRUTH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"/\*\s*truth\s*:([^*]*)\*/").unwrap());

/// Labels named by a `/* truth: ... */` marker on the line.
pub fn truth_labels(line: &str) -> LabelSet {
    TRUTH
        .captures_iter(line)
        .flat_map(|c| {
            c[1].split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter_map(|w| w.parse::<DistortionType>().ok())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Only prompts for this task match.
    #[serde(default)]
    pub task: Option<PromptTask>,
    /// Every string must occur in the prompt.
    #[serde(default)]
    pub contains: Vec<String>,
    /// Fixed completion text.
    #[serde(default)]
    pub response: Option<String>,
    /// Answer with the prompt's code block unchanged.
    #[serde(default)]
    pub echo: bool,
    /// Answer as the oracle would.
    #[serde(default)]
    pub oracle: bool,
    /// Fail with this HTTP status instead of answering.
    #[serde(default)]
    pub fail: Option<u16>,
}

impl MockRule {
    fn matches(&self, prompt: &str) -> bool {
        self.task.is_none_or(|t| PromptTask::of(prompt) == Some(t))
            && self.contains.iter().all(|c| prompt.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.as_ref().display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    Oracle,
    Script(MockScript),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockProvider {
    pub behavior: MockBehavior,
}

impl MockProvider {
    pub fn oracle() -> Self {
        Self {
            behavior: MockBehavior::Oracle,
        }
    }

    pub fn script(script: MockScript) -> Self {
        Self {
            behavior: MockBehavior::Script(script),
        }
    }
}

fn unmatched(prompt: &str) -> LlmError {
    LlmError::UnmatchedPrompt(prompt.chars().take(60).collect())
}

fn oracle_redundancy(code: &str) -> String {
    let mut names: Vec<&str> = Vec::new();
    let mut current: Option<&str> = None;
    for line in code.lines() {
        if let Some(rest) = line.strip_prefix("Variable ") {
            current = rest.strip_suffix(':');
        } else if let Some(var) = current {
            if truth_labels(line).contains(&DistortionType::I4) && !names.contains(&var) {
                names.push(var);
            }
        }
    }
    if names.is_empty() {
        "none".into()
    } else {
        names.join(", ")
    }
}

fn rewrite(lines: impl Iterator<Item = (String, LabelSet)>) -> String {
    lines
        .filter(|(_, labels)| !labels.contains(&DistortionType::I4))
        .map(|(code, labels)| {
            if labels.is_empty() {
                code
            } else {
                format!("{code} //fixed")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn oracle_answer(prompt: &str) -> Result<String, LlmError> {
    let task = PromptTask::of(prompt).ok_or_else(|| unmatched(prompt))?;
    let code = PromptBundle::extract_code(prompt).ok_or_else(|| unmatched(prompt))?;
    Ok(match task {
        PromptTask::Redundancy => oracle_redundancy(code),
        PromptTask::Detection => code
            .lines()
            .map(|l| render_labels(l, &truth_labels(l)))
            .collect::<Vec<_>>()
            .join("\n"),
        PromptTask::Correction => rewrite(code.lines().map(|l| match split_labels(l) {
            Ok((c, labels)) => (c.to_string(), labels),
            Err(_) => (l.to_string(), LabelSet::new()),
        })),
        PromptTask::ZeroShot => rewrite(code.lines().map(|l| (l.to_string(), truth_labels(l)))),
    })
}

impl Provider for MockProvider {
    fn complete(&self, request: &LlmRequest) -> Result<ProviderReply, LlmError> {
        let prompt = request.prompt_text.as_str();
        let text = match &self.behavior {
            MockBehavior::Oracle => oracle_answer(prompt)?,
            MockBehavior::Script(script) => {
                let rule = script
                    .rules
                    .iter()
                    .find(|r| r.matches(prompt))
                    .ok_or_else(|| unmatched(prompt))?;
                if let Some(status) = rule.fail {
                    return Err(LlmError::Provider {
                        status: Some(status),
                        excerpt: "scripted failure".into(),
                    });
                }
                if rule.oracle {
                    oracle_answer(prompt)?
                } else if rule.echo {
                    PromptBundle::extract_code(prompt)
                        .ok_or_else(|| unmatched(prompt))?
                        .to_string()
                } else {
                    rule.response.clone().ok_or_else(|| unmatched(prompt))?
                }
            }
        };
        Ok(ProviderReply { text, usage: None })
    }
}

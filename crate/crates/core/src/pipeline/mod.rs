//! Detection and correction of one function, and batch runs over
//! directories of function files.

mod batch;
mod parse;

use std::fmt::Debug;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::chunk::{merge_annotations, segment, ChunkError, ChunkResult, MergeConflict};
use crate::corpus::PipelineConfig;
use crate::graph::variable_dependency_analysis;
use crate::intensity::{derive_feature_weights, FeatureWeights, IntensityParams, RetrievalMode};
use crate::labels::{AnnotatedFunction, CorrectionResult, LabelSet};
use crate::llm::{Gateway, LlmError, LlmRequest, TokenUsage};
use crate::prompt::{parse_redundant_variables, BaselineKind, PromptBundle, PromptError, PromptForge, Templates};
use crate::pseudocode::{DecompiledFunction, Lexicon, ParseError};
use crate::store::{EmbedError, EmbeddingIndex, RetrievalHit};

pub use batch::{
    render_report_table, BatchMode, BatchReport, FailureRecord, FunctionOutcome, CORRECTED_DIR, RUN_REPORT_FILE,
    WORKSHEET_FILE,
};
pub use parse::{parse_correction_output, parse_detection_output, split_labeled_text, OutputParseError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unusable model output after {attempts} attempts: {source}")]
    OutputParse { attempts: u32, source: OutputParseError },
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error("retrieval failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("function has no labeled lines")]
    NothingToCorrect,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Which prompts drive detection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Full pipeline: redundancy analysis, retrieval context, detection prompt.
    #[default]
    None,
    /// Single repair prompt without types or labels; no detection step.
    Zero,
    /// Definitions only, no context.
    Def,
    /// Definitions plus worked examples, no context.
    Eg,
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Baseline::None),
            "zero" => Ok(Baseline::Zero),
            "def" => Ok(Baseline::Def),
            "eg" => Ok(Baseline::Eg),
            other => Err(format!("unknown baseline `{other}` (none|zero|def|eg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub model_id: String,
    pub temperature: f64,
    pub max_attempts: u32,
    pub chunk_threshold: usize,
    pub chunk_overlap: usize,
    pub retrieval_k: usize,
    pub intensity: IntensityParams,
    pub retrieval: RetrievalMode,
    pub baseline: Baseline,
    pub strict: bool,
    /// Worker threads for batch runs.
    pub jobs: usize,
}

impl From<&PipelineConfig> for PipelineOptions {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            model_id: c.model_id.clone(),
            temperature: c.temperature,
            max_attempts: c.max_attempts,
            chunk_threshold: c.chunk_threshold,
            chunk_overlap: c.chunk_overlap,
            retrieval_k: c.retrieval_k,
            intensity: c.intensity_params,
            retrieval: RetrievalMode::Intensity,
            baseline: Baseline::None,
            strict: true,
            jobs: c.concurrency.max(1),
        }
    }
}

impl Default for PipelineOptions {
    fn default() -> Self {
        (&PipelineConfig::with_knowledge_base("")).into()
    }
}

/// Result of detecting one function.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub annotated: AnnotatedFunction,
    pub redundant_variables: Vec<String>,
    /// Detection (or baseline) requests, re-prompts included.
    pub detection_calls: usize,
    pub llm_calls: usize,
    pub reprompts: usize,
    pub retrieved_records: usize,
    pub conflicts: Vec<MergeConflict<LabelSet>>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub result: CorrectionResult,
    pub llm_calls: usize,
    pub reprompts: usize,
    pub usage: TokenUsage,
}

#[derive(Default)]
struct Counters {
    /// Requests whose answer had to parse.
    parsed: AtomicU64,
    retried: AtomicU64,
    detection: AtomicU64,
}

#[derive(Debug, Clone, Copy)]
struct CounterSnapshot {
    parsed: u64,
    retried: u64,
    detection: u64,
}

impl Counters {
    fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            parsed: self.parsed.load(Ordering::Relaxed),
            retried: self.retried.load(Ordering::Relaxed),
            detection: self.detection.load(Ordering::Relaxed),
        }
    }
}

#[derive(Default)]
struct CallLog {
    calls: usize,
    reprompts: usize,
    usage: TokenUsage,
}

pub struct Pipeline<T> {
    pub options: PipelineOptions,
    pub forge: PromptForge,
    pub lexicon: Lexicon,
    gateway: Arc<Gateway>,
    index: Option<Arc<EmbeddingIndex<T>>>,
    weights: FeatureWeights<T>,
    counters: Counters,
}

impl<T> Pipeline<T>
where
    T: Float + Send + Sync + Debug + Serialize + 'static,
{
    /// Feature weights come from the construct frequencies of the indexed
    /// records; without an index retrieval is skipped.
    pub fn new(options: PipelineOptions, gateway: Arc<Gateway>, index: Option<EmbeddingIndex<T>>, lexicon: Lexicon) -> Self {
        let weights = match &index {
            Some(idx) => derive_feature_weights(idx.records().iter().map(|r| r.code_line.as_str()), &lexicon),
            None => FeatureWeights::zero(),
        };
        Self {
            options,
            forge: PromptForge::default(),
            lexicon,
            gateway,
            index: index.map(Arc::new),
            weights,
            counters: Counters::default(),
        }
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.forge = PromptForge::new(templates);
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn weights(&self) -> &FeatureWeights<T> {
        &self.weights
    }

    fn ask(&self, prompt: &str, log: &mut CallLog) -> Result<String, LlmError> {
        let req = LlmRequest::new(
            prompt,
            self.options.model_id.clone(),
            self.options.temperature,
            self.options.max_attempts,
        );
        let resp = self.gateway.complete(&req)?;
        log.calls += 1;
        log.usage += resp.token_usage;
        Ok(resp.text)
    }

    /// Sends `bundle`; on a parse failure re-sends once with a format
    /// reminder appended.
    fn ask_parsed<R>(
        &self,
        bundle: &PromptBundle,
        log: &mut CallLog,
        parse: impl Fn(&str) -> Result<R, OutputParseError>,
    ) -> Result<R, PipelineError> {
        self.counters.parsed.fetch_add(1, Ordering::Relaxed);
        let prompt = bundle.render();
        let first = self.ask(&prompt, log)?;
        match parse(&first) {
            Ok(r) => Ok(r),
            Err(e) => {
                log::warn!("unparseable answer ({e}); re-prompting");
                log.reprompts += 1;
                self.counters.retried.fetch_add(1, Ordering::Relaxed);
                let retry = format!("{prompt}\n\n{}", self.forge.templates.reminder());
                let second = self.ask(&retry, log)?;
                parse(&second).map_err(|source| PipelineError::OutputParse { attempts: 2, source })
            }
        }
    }

    fn retrieve(&self, lines: &[crate::pseudocode::SourceLine]) -> Result<Vec<RetrievalHit<T>>, EmbedError> {
        let Some(index) = &self.index else {
            return Ok(Vec::new());
        };
        let mut hits = Vec::new();
        for line in self.options.retrieval.select(lines, &self.weights, &self.options.intensity) {
            hits.extend(index.retrieve(&line.text, self.options.retrieval_k)?);
        }
        Ok(hits)
    }

    pub fn detect(&self, function: &DecompiledFunction) -> Result<Detection, PipelineError> {
        let mut log = CallLog::default();
        let baseline_kind = match self.options.baseline {
            Baseline::None => None,
            Baseline::Def => Some(BaselineKind::WithDefinitions),
            Baseline::Eg => Some(BaselineKind::WithExamples),
            Baseline::Zero => Some(BaselineKind::ZeroShot),
        };
        let mut redundant = Vec::new();
        if baseline_kind.is_none() {
            let map = variable_dependency_analysis(function);
            if !map.is_empty() {
                let answer = self.ask(&self.forge.redundancy(&map)?.render(), &mut log)?;
                redundant = parse_redundant_variables(&answer);
                redundant.retain(|v| function.variables.contains(v));
            }
        }
        let chunks = segment(function, self.options.chunk_threshold, self.options.chunk_overlap)?;
        let mut results = Vec::with_capacity(chunks.len());
        let mut detection_calls = 0;
        let mut retrieved_records = 0;
        for chunk in &chunks {
            let code = chunk.text();
            let bundle = match baseline_kind {
                Some(kind) => self.forge.baseline(kind, &code)?,
                None => {
                    let hits = self.retrieve(chunk.lines)?;
                    retrieved_records += hits.len();
                    self.forge.detection(&code, &redundant, &hits)?
                }
            };
            let expected: Vec<&str> = chunk.lines.iter().map(|l| l.text.as_str()).collect();
            let before = log.calls;
            let local = self.ask_parsed(&bundle, &mut log, |text| {
                parse_detection_output(text, &expected, self.options.strict)
            })?;
            detection_calls += log.calls - before;
            self.counters.detection.fetch_add((log.calls - before) as u64, Ordering::Relaxed);
            results.push(ChunkResult {
                start_line: chunk.start_line,
                end_line: chunk.end_line,
                lines: local
                    .into_iter()
                    .map(|(rel, set)| (chunk.start_line + rel - 1, set))
                    .collect(),
            });
        }
        let merged = merge_annotations(function.len(), &results)?;
        let mut annotated = AnnotatedFunction::new(function.clone());
        for (line, set) in merged.lines {
            annotated.set(line, set);
        }
        Ok(Detection {
            annotated,
            redundant_variables: redundant,
            detection_calls,
            llm_calls: log.calls,
            reprompts: log.reprompts,
            retrieved_records,
            conflicts: merged.conflicts,
            usage: log.usage,
        })
    }

    /// Correction prompt over the whole function; long functions are not chunked.
    pub fn correct(&self, annotated: &AnnotatedFunction) -> Result<Correction, PipelineError> {
        if annotated.is_unlabeled() {
            return Err(PipelineError::NothingToCorrect);
        }
        let mut log = CallLog::default();
        let bundle = self.forge.correction(annotated)?;
        let result = self.ask_parsed(&bundle, &mut log, |text| parse_correction_output(text, annotated))?;
        Ok(Correction {
            result,
            llm_calls: log.calls,
            reprompts: log.reprompts,
            usage: log.usage,
        })
    }

    /// The label-free repair baseline.
    pub fn zero_shot(&self, function: &DecompiledFunction) -> Result<Correction, PipelineError> {
        let mut log = CallLog::default();
        let bundle = self.forge.baseline(BaselineKind::ZeroShot, &function.raw_text)?;
        let plain = AnnotatedFunction::new(function.clone());
        let result = self.ask_parsed(&bundle, &mut log, |text| parse_correction_output(text, &plain))?;
        Ok(Correction {
            result,
            llm_calls: log.calls,
            reprompts: log.reprompts,
            usage: log.usage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::DistortionType::*;
    use crate::llm::{MockProvider, MockScript};
    use crate::pseudocode::parse_function;
    use crate::store::{DistortionRecord, HashEmbedder, Origin};
    use std::collections::BTreeSet;

    fn pipeline(provider: MockProvider, index: bool) -> Pipeline<f64> {
        let gw = Arc::new(Gateway::new(Arc::new(provider), 4).with_backoff(std::time::Duration::ZERO));
        let idx = index.then(|| {
            let recs = vec![
                DistortionRecord {
                    id: 0,
                    code_line: "*(_DWORD *)(a1 + 4) = 0;".into(),
                    label: I1,
                    origin: Origin::Ida,
                },
                DistortionRecord {
                    id: 1,
                    code_line: "v5 = v4;".into(),
                    label: I4,
                    origin: Origin::Ida,
                },
            ];
            EmbeddingIndex::build(recs, Arc::new(HashEmbedder::default())).unwrap()
        });
        Pipeline::new(PipelineOptions::default(), gw, idx, Lexicon::default())
    }

    const FUNC: &str = "int __cdecl f(int a1)\n{\n  int v4; // eax\n  int v5; /* truth: I4 */\n  v4 = a1 + 1;\n  v5 = v4; /* truth: I4 */\n  *(_DWORD *)(a1 + 4) = 0; /* truth: I1 */\n  return v5;\n}";

    #[test]
    fn oracle_detection_matches_truth() {
        let p = pipeline(MockProvider::oracle(), true);
        let f = parse_function(FUNC).unwrap();
        let d = p.detect(&f).unwrap();
        assert_eq!(d.annotated.lines_with(I4), BTreeSet::from([4, 6]));
        assert_eq!(d.annotated.lines_with(I1), BTreeSet::from([7]));
        assert_eq!(d.detection_calls, 1);
        assert_eq!(d.llm_calls, 2);
        assert_eq!(d.redundant_variables, vec!["v5".to_string()]);
        assert!(d.retrieved_records > 0);
        let transcript = p.gateway().transcript();
        assert!(transcript[1].prompt.contains("v5 = v4; // I4"));
    }

    #[test]
    fn empty_database_still_detects() {
        let p = pipeline(MockProvider::oracle(), false);
        let d = p.detect(&parse_function(FUNC).unwrap()).unwrap();
        assert_eq!(d.retrieved_records, 0);
        assert!(!p.gateway().transcript()[1].prompt.contains("## Context\nSimilar"));
        assert_eq!(d.annotated.labels().len(), 3);
    }

    #[test]
    fn long_function_is_chunked() {
        let text: Vec<String> = (1..=120)
            .map(|i| {
                if i % 10 == 0 {
                    format!("v{i} = v{}; /* truth: I4 */", i - 1)
                } else {
                    format!("v{i} = {i};")
                }
            })
            .collect();
        let p = pipeline(MockProvider::oracle(), true);
        let d = p.detect(&parse_function(&text.join("\n")).unwrap()).unwrap();
        assert_eq!(d.detection_calls, 3);
        assert_eq!(d.annotated.lines_with(I4).len(), 12);
        assert!(d.conflicts.is_empty());
    }

    #[test]
    fn malformed_output_reprompts_once_then_fails() {
        let script = MockScript::from_json(
            r#"{"rules": [{"task": "redundancy", "response": "none"}, {"task": "detection", "response": "nonsense"}]}"#,
        )
        .unwrap();
        let p = pipeline(MockProvider::script(script), false);
        match p.detect(&parse_function("a = 1;\nb = a;").unwrap()) {
            Err(PipelineError::OutputParse { attempts: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(p.gateway().stats().calls, 3);
    }

    #[test]
    fn correction_removes_i4_lines() {
        let p = pipeline(MockProvider::oracle(), true);
        let f = parse_function(FUNC).unwrap();
        let d = p.detect(&f).unwrap();
        let c = p.correct(&d.annotated).unwrap();
        assert_eq!(c.result.corrected_lines.len(), f.len() - 2);
        assert_eq!(c.result.removed_input_indices, BTreeSet::from([4, 6]));
        assert_eq!(c.result.fixed_indices.len(), 1);
        assert!(matches!(
            p.correct(&AnnotatedFunction::new(f)),
            Err(PipelineError::NothingToCorrect)
        ));
    }

    #[test]
    fn baselines_skip_context() {
        let mut p = pipeline(MockProvider::oracle(), true);
        p.options.baseline = Baseline::Eg;
        let d = p.detect(&parse_function(FUNC).unwrap()).unwrap();
        assert_eq!(d.llm_calls, 1);
        assert_eq!(d.retrieved_records, 0);
        assert!(p.gateway().transcript()[0].prompt.contains("### Example 3"));
        p.options.baseline = Baseline::Zero;
        let z = p.zero_shot(&parse_function(FUNC).unwrap()).unwrap();
        assert_eq!(z.result.fixed_indices.len(), 1);
    }

    #[test]
    fn baseline_names() {
        assert_eq!("eg".parse::<Baseline>(), Ok(Baseline::Eg));
        assert!("full".parse::<Baseline>().is_err());
    }
}

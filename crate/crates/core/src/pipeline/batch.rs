//! Directory-level runs: every function of every file, in parallel.

use std::fmt::{Debug, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{split_labeled_text, Baseline, Pipeline, PipelineError};
use crate::corpus::{split_functions, write_function_file};
use crate::evaluation::{worksheet_rows, write_worksheet, FixCounts, WorksheetRow};
use crate::labels::AnnotatedFunction;
use crate::llm::TokenUsage;

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const WORKSHEET_FILE: &str = "cfr_worksheet.csv";
/// Subdirectory for corrected output when detection and correction run together.
pub const CORRECTED_DIR: &str = "corrected";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Detect,
    DetectAndCorrect,
    /// Input files already carry `// I<k>` labels.
    Correct,
}

impl BatchMode {
    fn corrects(self) -> bool {
        !matches!(self, BatchMode::Detect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub file: String,
    /// 1-based position in the file.
    pub function: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub mode: BatchMode,
    pub baseline: Baseline,
    pub files: usize,
    pub functions: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Functions with nothing to correct.
    pub skipped: usize,
    pub failures: Vec<FailureRecord>,
    pub llm_calls: u64,
    pub llm_attempts: u64,
    pub detection_calls: u64,
    pub reprompts: u64,
    pub first_attempt_parse_rate: Option<f64>,
    pub usage: TokenUsage,
    pub average_prompt_tokens: Option<f64>,
    pub wall_time_secs: f64,
    pub labeled_lines: u64,
    pub chunk_conflicts: u64,
    pub fix_counts: FixCounts,
    pub fix_rate: Option<f64>,
    /// Written files, relative to the output directory.
    pub outputs: Vec<String>,
}

impl BatchReport {
    pub fn has_failures(&self) -> bool {
        self.failed > 0
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}

/// One function's result.
#[derive(Debug, Clone, Default)]
pub struct FunctionOutcome {
    /// Detection output (labeled code), if detection ran.
    pub detected: Option<String>,
    /// Correction output with `//fixed` markers, if correction ran.
    pub corrected: Option<String>,
    pub error: Option<String>,
    pub skipped: bool,
    pub labeled_lines: u64,
    pub conflicts: u64,
    pub fix_counts: FixCounts,
    pub worksheet: Vec<WorksheetRow>,
}

fn list_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            if entry.file_type()?.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn rel_name(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

impl<T> Pipeline<T>
where
    T: Float + Send + Sync + Debug + Serialize + 'static,
{
    fn process(&self, text: &str, mode: BatchMode, name: &str) -> Result<FunctionOutcome, PipelineError> {
        let mut out = FunctionOutcome::default();
        if mode == BatchMode::Correct {
            let (code, labels) = split_labeled_text(text).map_err(|source| PipelineError::OutputParse { attempts: 0, source })?;
            let mut annotated = AnnotatedFunction::new(self.lexicon.parse_function(&code)?);
            for (line, set) in labels {
                annotated.set(line, set);
            }
            self.correct_into(&annotated, name, &mut out)?;
            return Ok(out);
        }
        let function = self.lexicon.parse_function(text)?;
        if self.options.baseline == Baseline::Zero {
            let c = self.zero_shot(&function)?;
            out.corrected = Some(c.result.render());
            out.fix_counts.fixed_marked = c.result.fixed_indices.len() as u64;
            out.detected = out.corrected.clone();
            return Ok(out);
        }
        let d = self.detect(&function)?;
        out.detected = Some(d.annotated.render());
        out.labeled_lines = d.annotated.labels().len() as u64;
        out.conflicts = d.conflicts.len() as u64;
        if mode.corrects() {
            self.correct_into(&d.annotated, name, &mut out)?;
        }
        Ok(out)
    }

    fn correct_into(&self, annotated: &AnnotatedFunction, name: &str, out: &mut FunctionOutcome) -> Result<(), PipelineError> {
        out.labeled_lines = annotated.labels().len() as u64;
        if annotated.is_unlabeled() {
            out.skipped = true;
            out.corrected = Some(annotated.function.raw_text.clone());
            return Ok(());
        }
        let c = self.correct(annotated)?;
        out.fix_counts = FixCounts::observe(annotated, &c.result);
        out.worksheet = worksheet_rows(name, annotated, &c.result);
        out.corrected = Some(c.result.render());
        Ok(())
    }

    /// Processes every function file under `input_dir` and mirrors the
    /// results into `output_dir`. A failed function keeps its input text in
    /// the output so files stay aligned with their inputs.
    pub fn run_batch(&self, input_dir: &Path, output_dir: &Path, mode: BatchMode) -> Result<BatchReport, PipelineError> {
        let started = Instant::now();
        let stats_before = self.gateway().stats();
        let counters_before = self.counters.snapshot();

        let files = list_files(input_dir)?;
        let mut units = Vec::new();
        let mut per_file = Vec::with_capacity(files.len());
        for path in &files {
            let functions = split_functions(&fs::read_to_string(path)?);
            let rel = rel_name(path, input_dir);
            for (i, f) in functions.iter().enumerate() {
                units.push((per_file.len(), i + 1, f.clone(), format!("{rel}#{}", i + 1)));
            }
            per_file.push((rel, functions));
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.options.jobs.max(1))
            .build()
            .map_err(io::Error::other)?;
        let outcomes: Vec<FunctionOutcome> = pool.install(|| {
            units
                .par_iter()
                .map(|(_, _, text, name)| {
                    self.process(text, mode, name).unwrap_or_else(|e| {
                        log::warn!("{name}: {e}");
                        FunctionOutcome {
                            error: Some(e.to_string()),
                            ..Default::default()
                        }
                    })
                })
                .collect()
        });

        let mut detected: Vec<Vec<String>> = per_file.iter().map(|(_, f)| f.clone()).collect();
        let mut corrected = detected.clone();
        let mut report = BatchReport {
            mode,
            baseline: self.options.baseline,
            files: files.len(),
            functions: units.len(),
            succeeded: 0,
            failed: 0,
            skipped: 0,
            failures: Vec::new(),
            llm_calls: 0,
            llm_attempts: 0,
            detection_calls: 0,
            reprompts: 0,
            first_attempt_parse_rate: None,
            usage: TokenUsage::default(),
            average_prompt_tokens: None,
            wall_time_secs: 0.0,
            labeled_lines: 0,
            chunk_conflicts: 0,
            fix_counts: FixCounts::default(),
            fix_rate: None,
            outputs: Vec::new(),
        };
        let mut worksheet = Vec::new();
        for ((file, func, _, _), o) in units.iter().zip(outcomes) {
            if let Some(err) = o.error {
                report.failed += 1;
                report.failures.push(FailureRecord {
                    file: per_file[*file].0.clone(),
                    function: *func,
                    error: err,
                });
                continue;
            }
            report.succeeded += 1;
            report.skipped += o.skipped as usize;
            report.labeled_lines += o.labeled_lines;
            report.chunk_conflicts += o.conflicts;
            report.fix_counts = report.fix_counts + o.fix_counts;
            if let Some(d) = o.detected {
                detected[*file][func - 1] = d;
            }
            if let Some(c) = o.corrected {
                corrected[*file][func - 1] = c;
            }
            worksheet.extend(o.worksheet);
        }

        for (i, (rel, functions)) in per_file.iter().enumerate() {
            if functions.is_empty() {
                continue;
            }
            let (primary, extra) = match mode {
                BatchMode::Detect => (&detected[i], None),
                BatchMode::Correct => (&corrected[i], None),
                BatchMode::DetectAndCorrect => (&detected[i], Some(&corrected[i])),
            };
            write_function_file(primary, output_dir.join(rel))?;
            report.outputs.push(rel.clone());
            if let Some(c) = extra {
                let path = format!("{CORRECTED_DIR}/{rel}");
                write_function_file(c, output_dir.join(&path))?;
                report.outputs.push(path);
            }
        }
        if mode.corrects() {
            write_worksheet(&output_dir.join(WORKSHEET_FILE), &worksheet).map_err(|e| io::Error::other(e.to_string()))?;
            report.outputs.push(WORKSHEET_FILE.to_string());
            report.fix_rate = report.fix_counts.fix_rate::<f64>().ok();
        }

        let stats = self.gateway().stats();
        let counters = self.counters.snapshot();
        report.llm_calls = stats.calls - stats_before.calls;
        report.llm_attempts = stats.attempts - stats_before.attempts;
        report.usage = TokenUsage {
            prompt_tokens: stats.usage.prompt_tokens - stats_before.usage.prompt_tokens,
            completion_tokens: stats.usage.completion_tokens - stats_before.usage.completion_tokens,
        };
        report.detection_calls = counters.detection - counters_before.detection;
        report.reprompts = counters.retried - counters_before.retried;
        let parsed = counters.parsed - counters_before.parsed;
        if parsed > 0 {
            report.first_attempt_parse_rate = Some(1.0 - report.reprompts as f64 / parsed as f64);
        }
        if report.llm_calls > 0 {
            report.average_prompt_tokens = Some(report.usage.prompt_tokens as f64 / report.llm_calls as f64);
        }
        report.wall_time_secs = started.elapsed().as_secs_f64();
        fs::create_dir_all(output_dir)?;
        let json = serde_json::to_string_pretty(&report).map_err(io::Error::other)?;
        fs::write(output_dir.join(RUN_REPORT_FILE), json)?;
        Ok(report)
    }
}

/// Human-readable summary of a run report.
pub fn render_report_table(r: &BatchReport) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut s = String::new();
    let _ = writeln!(s, "mode            {:?} (baseline {:?})", r.mode, r.baseline);
    let _ = writeln!(s, "files           {}", r.files);
    let _ = writeln!(s, "functions       {} ok, {} failed, {} skipped", r.succeeded, r.failed, r.skipped);
    let _ = writeln!(s, "llm calls       {} ({} attempts, {} detection, {} re-prompts)", r.llm_calls, r.llm_attempts, r.detection_calls, r.reprompts);
    let _ = writeln!(s, "first-try parse {}", opt(r.first_attempt_parse_rate));
    let _ = writeln!(s, "tokens          {} prompt + {} completion", r.usage.prompt_tokens, r.usage.completion_tokens);
    let _ = writeln!(s, "avg prompt      {}", r.average_prompt_tokens.map_or("n/a".to_string(), |x| format!("{x:.1}")));
    let _ = writeln!(s, "wall time       {:.2}s", r.wall_time_secs);
    let _ = writeln!(s, "labeled lines   {}", r.labeled_lines);
    if r.chunk_conflicts > 0 {
        let _ = writeln!(s, "chunk conflicts {}", r.chunk_conflicts);
    }
    if r.mode.corrects() {
        let f = r.fix_counts;
        let _ = writeln!(s, "FR              {} ({} fixed / {} flagged - {} I4)", opt(r.fix_rate), f.fixed_marked, f.flagged_lines, f.flagged_i4);
    }
    for f in &r.failures {
        let _ = writeln!(s, "failed          {}#{}: {}", f.file, f.function, f.error);
    }
    s
}

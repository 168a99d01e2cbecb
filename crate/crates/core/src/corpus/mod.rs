//! Function files: decompiled functions separated by `/////` lines.

mod config;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, ConfigError, PipelineConfig, SecretRef};

pub const FUNCTION_SEPARATOR: &str = "/////";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionFile {
    pub path: PathBuf,
    pub functions: Vec<String>,
    /// Whether the file ended with a newline; kept so rewrites are exact.
    pub trailing_newline: bool,
}

impl FunctionFile {
    pub fn read(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            functions: split_functions(&text),
            trailing_newline: text.ends_with('\n'),
        })
    }

    pub fn render(&self) -> String {
        let mut s = render_function_file(&self.functions);
        if self.trailing_newline {
            s.push('\n');
        }
        s
    }

    pub fn write(&self) -> io::Result<()> {
        if self.functions.is_empty() {
            return write_function_file(&self.functions, &self.path);
        }
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(&self.path, self.render())
    }
}

fn is_separator(line: &str) -> bool {
    line.trim() == FUNCTION_SEPARATOR
}

/// Splits file text on lines that are exactly `/////` once trimmed.
///
/// Leading and trailing blank lines of each segment are dropped, as are
/// segments that end up empty.
pub fn split_functions(file_text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut flush = |seg: &mut Vec<&str>| {
        let start = seg.iter().position(|l| !l.trim().is_empty());
        let end = seg.iter().rposition(|l| !l.trim().is_empty());
        if let (Some(s), Some(e)) = (start, end) {
            out.push(seg[s..=e].join("\n"));
        }
        seg.clear();
    };
    for line in file_text.lines() {
        if is_separator(line) {
            flush(&mut current);
        } else {
            current.push(line);
        }
    }
    flush(&mut current);
    out
}

/// Joins functions with separator lines. No trailing newline is added.
pub fn render_function_file<S: AsRef<str>>(functions: &[S]) -> String {
    let sep = format!("\n{FUNCTION_SEPARATOR}\n");
    functions
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(&sep)
}

pub fn write_function_file<S: AsRef<str>>(functions: &[S], path: impl AsRef<Path>) -> io::Result<()> {
    if functions.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "refusing to write an empty function file",
        ));
    }
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, render_function_file(functions))
}

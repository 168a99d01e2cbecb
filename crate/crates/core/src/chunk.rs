//! Overlapping line windows for long functions, and merging per-window
//! results back into one per-line map.

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::pseudocode::{DecompiledFunction, SourceLine};

pub const DEFAULT_CHUNK_THRESHOLD: usize = 50;
pub const DEFAULT_CHUNK_OVERLAP: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("invalid chunking parameters: threshold {threshold}, overlap {overlap}")]
    InvalidParams { threshold: usize, overlap: usize },
    #[error("line {0} is not covered by any chunk")]
    CoverageGap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chunk<'a> {
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    pub lines: &'a [SourceLine],
}

impl Chunk<'_> {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn text(&self) -> String {
        self.lines
            .iter()
            .map(|l| l.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Inclusive 1-based line ranges for a function of `total` lines.
pub fn chunk_ranges(total: usize, threshold: usize, overlap: usize) -> Result<Vec<(usize, usize)>, ChunkError> {
    if threshold == 0 || overlap >= threshold {
        return Err(ChunkError::InvalidParams { threshold, overlap });
    }
    let mut out = Vec::new();
    if total == 0 {
        return Ok(out);
    }
    let mut start = 1;
    loop {
        let end = (start + threshold - 1).min(total);
        out.push((start, end));
        if end == total {
            return Ok(out);
        }
        start += threshold - overlap;
    }
}

pub fn segment(function: &DecompiledFunction, threshold: usize, overlap: usize) -> Result<Vec<Chunk<'_>>, ChunkError> {
    Ok(chunk_ranges(function.len(), threshold, overlap)?
        .into_iter()
        .map(|(s, e)| Chunk {
            start_line: s,
            end_line: e,
            lines: &function.lines[s - 1..e],
        })
        .collect())
}

/// Per-line results produced for one chunk, keyed by absolute line number.
/// Lines of the range missing from `lines` take `A::default()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkResult<A> {
    pub start_line: usize,
    pub end_line: usize,
    pub lines: BTreeMap<usize, A>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConflict<A> {
    pub line: usize,
    pub kept: A,
    pub dropped: A,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merged<A> {
    /// One entry for every line of the function.
    pub lines: BTreeMap<usize, A>,
    pub conflicts: Vec<MergeConflict<A>>,
}

/// Merges chunk results; where chunks overlap the earlier chunk wins and
/// disagreements are reported as conflicts.
pub fn merge_annotations<A>(total: usize, chunks: &[ChunkResult<A>]) -> Result<Merged<A>, ChunkError>
where
    A: Clone + Default + PartialEq + Debug,
{
    let mut lines: BTreeMap<usize, A> = BTreeMap::new();
    let mut conflicts = Vec::new();
    for c in chunks {
        for (&line, _) in c.lines.range(..c.start_line).chain(c.lines.range(c.end_line + 1..)) {
            log::warn!("chunk {}-{} annotated line {line} outside its range; ignored", c.start_line, c.end_line);
        }
        for line in c.start_line..=c.end_line.min(total) {
            let value = c.lines.get(&line).cloned().unwrap_or_default();
            match lines.get(&line) {
                None => {
                    lines.insert(line, value);
                }
                Some(kept) if *kept != value => {
                    log::warn!("overlap disagreement on line {line}: keeping {kept:?}, dropping {value:?}");
                    conflicts.push(MergeConflict {
                        line,
                        kept: kept.clone(),
                        dropped: value,
                    });
                }
                Some(_) => {}
            }
        }
    }
    if let Some(gap) = (1..=total).find(|l| !lines.contains_key(l)) {
        return Err(ChunkError::CoverageGap(gap));
    }
    Ok(Merged { lines, conflicts })
}

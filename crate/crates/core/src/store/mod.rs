//! The annotated distortion database and its similarity index.

mod embed;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::labels::{split_labels, DistortionType};

pub use embed::{EmbedError, Embedder, HashEmbedder, RemoteEmbedder, HASH_EMBEDDING_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Ida,
    Ghidra,
}

impl Origin {
    /// Guesses the decompiler from a database file name; IDA unless the
    /// name mentions Ghidra.
    pub fn from_path(path: &Path) -> Self {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if name.contains("ghidra") {
            Origin::Ghidra
        } else {
            Origin::Ida
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Ida => "ida",
            Origin::Ghidra => "ghidra",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistortionRecord {
    pub id: usize,
    pub code_line: String,
    pub label: DistortionType,
    pub origin: Origin,
}

impl DistortionRecord {
    /// The record as it appears in prompts: code with its label comment.
    pub fn annotated(&self) -> String {
        format!("{} // {}", self.code_line, self.label)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line_no}: no valid distortion label in `{text}`")]
    MalformedRecord { line_no: usize, text: String },
    #[error("distortion database is empty")]
    EmptyDatabase,
    #[error("embedding record {record_id} failed: {source}")]
    Embedder {
        record_id: usize,
        source: EmbedError,
    },
}

/// How one database line maps to code text and a label. Returning `None`
/// rejects the line.
pub trait RecordFormat: Send + Sync {
    fn parse_line(&self, line: &str) -> Option<(String, DistortionType)>;
}

/// `code // I<k>` with exactly one label.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrailingLabelFormat;

impl RecordFormat for TrailingLabelFormat {
    fn parse_line(&self, line: &str) -> Option<(String, DistortionType)> {
        let (code, labels) = split_labels(line).ok()?;
        let code = code.trim();
        if labels.len() != 1 || code.is_empty() {
            return None;
        }
        Some((code.to_string(), *labels.first()?))
    }
}

/// Parses database text; ids continue from `first_id` in file order.
pub fn parse_database(
    text: &str,
    origin: Origin,
    format: &dyn RecordFormat,
    first_id: usize,
) -> Result<Vec<DistortionRecord>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (code_line, label) = format
            .parse_line(line)
            .ok_or_else(|| StoreError::MalformedRecord {
                line_no: i + 1,
                text: line.to_string(),
            })?;
        out.push(DistortionRecord {
            id: first_id + out.len(),
            code_line,
            label,
            origin,
        });
    }
    Ok(out)
}

pub fn load_database(path: impl AsRef<Path>) -> Result<Vec<DistortionRecord>, StoreError> {
    let path = path.as_ref();
    load_database_with(path, Origin::from_path(path), &TrailingLabelFormat)
}

pub fn load_database_with(
    path: &Path,
    origin: Origin,
    format: &dyn RecordFormat,
) -> Result<Vec<DistortionRecord>, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = parse_database(&text, origin, format, 0)?;
    if records.is_empty() {
        return Err(StoreError::EmptyDatabase);
    }
    Ok(records)
}

/// Loads a database file, or every regular file in a directory (sorted by
/// name) with ids numbered across files.
pub fn load_database_path(path: impl AsRef<Path>) -> Result<Vec<DistortionRecord>, StoreError> {
    let path = path.as_ref();
    if !path.is_dir() {
        return load_database(path);
    }
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut all = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|source| StoreError::Io {
            path: f.clone(),
            source,
        })?;
        let mut recs = parse_database(&text, Origin::from_path(&f), &TrailingLabelFormat, all.len())?;
        all.append(&mut recs);
    }
    if all.is_empty() {
        return Err(StoreError::EmptyDatabase);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalHit<T> {
    pub record: DistortionRecord,
    pub similarity: T,
}

/// Scales `v` to unit L2 norm; zero vectors are left as is.
pub fn normalize<T: Float>(v: &mut [T]) {
    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Exact nearest-neighbour index over normalized record embeddings.
#[derive(Clone)]
pub struct EmbeddingIndex<T> {
    records: Vec<DistortionRecord>,
    vectors: Vec<Vec<T>>,
    embedder: Arc<dyn Embedder<T>>,
}

impl<T: fmt::Debug> fmt::Debug for EmbeddingIndex<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingIndex")
            .field("records", &self.records.len())
            .finish_non_exhaustive()
    }
}

const EMBED_BATCH: usize = 64;

impl<T: Float + Send + Sync + 'static> EmbeddingIndex<T> {
    pub fn build(records: Vec<DistortionRecord>, embedder: Arc<dyn Embedder<T>>) -> Result<Self, StoreError> {
        if records.is_empty() {
            return Err(StoreError::EmptyDatabase);
        }
        let mut vectors = Vec::with_capacity(records.len());
        for batch in records.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = batch.iter().map(|r| r.code_line.as_str()).collect();
            let embedded = embedder.embed(&texts).map_err(|source| StoreError::Embedder {
                record_id: batch[0].id,
                source,
            })?;
            if embedded.len() != batch.len() {
                return Err(StoreError::Embedder {
                    record_id: batch[0].id,
                    source: EmbedError::Shape(format!(
                        "expected {} vectors, got {}",
                        batch.len(),
                        embedded.len()
                    )),
                });
            }
            for mut v in embedded {
                normalize(&mut v);
                vectors.push(v);
            }
        }
        Ok(Self {
            records,
            vectors,
            embedder,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DistortionRecord] {
        &self.records
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn embed_query(&self, query: &str) -> Result<Vec<T>, EmbedError> {
        let mut v = self
            .embedder
            .embed(&[query])?
            .pop()
            .ok_or_else(|| EmbedError::Shape("no vector for query".into()))?;
        normalize(&mut v);
        Ok(v)
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalHit<T>>, EmbedError> {
        let q = self.embed_query(query)?;
        Ok(self.retrieve_vector(&q, k))
    }

    /// Top `k` records by inner product with `q`; ties go to the lower id.
    pub fn retrieve_vector(&self, q: &[T], k: usize) -> Vec<RetrievalHit<T>> {
        let mut scored: Vec<(T, usize)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (dot(q, v), i))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.records[a.1].id.cmp(&self.records[b.1].id))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(similarity, i)| RetrievalHit {
                record: self.records[i].clone(),
                similarity,
            })
            .collect()
    }
}

impl<T: Serialize> EmbeddingIndex<T> {
    /// JSON dump of records and their normalized vectors.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Entry<'a, T> {
            #[serde(flatten)]
            record: &'a DistortionRecord,
            vector: &'a [T],
        }
        let entries: Vec<Entry<'_, T>> = self
            .records
            .iter()
            .zip(&self.vectors)
            .map(|(record, vector)| Entry { record, vector })
            .collect();
        serde_json::to_value(entries).expect("index entries serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hash_index(records: Vec<DistortionRecord>) -> EmbeddingIndex<f64> {
        EmbeddingIndex::build(records, Arc::new(HashEmbedder::default())).unwrap()
    }

    fn rec(id: usize, code: &str, label: DistortionType) -> DistortionRecord {
        DistortionRecord {
            id,
            code_line: code.into(),
            label,
            origin: Origin::Ida,
        }
    }

    #[test]
    fn load_examples() {
        let recs = parse_database(
            "*(_DWORD *)(a1 + 4) = 0; // I1\n\nv5 = v4; // I4\n",
            Origin::Ida,
            &TrailingLabelFormat,
            0,
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].label, DistortionType::I1);
        assert_eq!(recs[0].code_line, "*(_DWORD *)(a1 + 4) = 0;");
        assert_eq!(recs[1].label, DistortionType::I4);
        assert_eq!(recs[1].id, 1);
    }

    #[test]
    fn unlabeled_line_is_malformed() {
        let err = parse_database("a = 1; // I2\nplain line with no label", Origin::Ida, &TrailingLabelFormat, 0)
            .unwrap_err();
        match err {
            StoreError::MalformedRecord { line_no, text } => {
                assert_eq!(line_no, 2);
                assert_eq!(text, "plain line with no label");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_database() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("db.c");
        fs::write(&p, "\n\n").unwrap();
        assert!(matches!(load_database(&p), Err(StoreError::EmptyDatabase)));
    }

    #[test]
    fn directory_database_numbers_across_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a_ida.c"), "x = 1; // I4\ny = 2; // I4").unwrap();
        fs::write(dir.path().join("b_ghidra.c"), "z = 3; // I6").unwrap();
        let recs = load_database_path(dir.path()).unwrap();
        assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(recs[2].origin, Origin::Ghidra);
    }

    #[test]
    fn empty_index_rejected() {
        let r: Result<EmbeddingIndex<f64>, _> = EmbeddingIndex::build(vec![], Arc::new(HashEmbedder::default()));
        assert!(matches!(r, Err(StoreError::EmptyDatabase)));
    }

    #[test]
    fn self_query_and_k() {
        let idx = hash_index(vec![
            rec(0, "v5 = v4;", DistortionType::I4),
            rec(1, "*(_DWORD *)(a1 + 4) = 0;", DistortionType::I1),
            rec(2, "if ( !v3 ) goto LABEL_7;", DistortionType::I3),
        ]);
        let hits = idx.retrieve("*(_DWORD *)(a1 + 4) = 0;", 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.id, 1);
        assert!(hits[0].similarity >= 0.999);
        assert_eq!(idx.retrieve("x", 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let idx = hash_index(vec![
            rec(0, "a = b;", DistortionType::I4),
            rec(1, "q = r;", DistortionType::I4),
            rec(2, "a = b;", DistortionType::I1),
        ]);
        let hits = idx.retrieve("a = b;", 2).unwrap();
        assert_eq!(hits[0].record.id, 0);
        assert_eq!(hits[1].record.id, 2);
    }

    #[test]
    fn rebuild_is_identical() {
        let recs = vec![rec(0, "v1 = v2 + 1;", DistortionType::I4), rec(1, "return 0;", DistortionType::I5)];
        let a = hash_index(recs.clone());
        let b = hash_index(recs);
        assert_eq!(a.vectors(), b.vectors());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn json_dump_shape() {
        let idx = hash_index(vec![rec(0, "v1 = 2;", DistortionType::I2)]);
        let j = idx.to_json();
        assert_eq!(j[0]["label"], "I2");
        assert_eq!(j[0]["origin"], "ida");
        assert_eq!(j[0]["vector"].as_array().unwrap().len(), HASH_EMBEDDING_DIM);
    }

    fn label() -> impl Strategy<Value = DistortionType> {
        prop::sample::select(DistortionType::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn record_serde_round_trip(id in 0usize..1000, code in "[a-z0-9 =;*()]{1,30}", l in label(), ghidra: bool) {
            let r = DistortionRecord {
                id,
                code_line: code,
                label: l,
                origin: if ghidra { Origin::Ghidra } else { Origin::Ida },
            };
            let back: DistortionRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn annotated_line_reloads(code in "[a-z][a-z0-9 =;*()+]{0,30}", l in label()) {
            let r = rec(0, code.trim(), l);
            let back = parse_database(&r.annotated(), Origin::Ida, &TrailingLabelFormat, 0).unwrap();
            prop_assert_eq!(&back[0], &r);
        }
    }
}

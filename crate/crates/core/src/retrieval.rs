//! Action-pose database and cosine-similarity retrieval.
//!
//! Label embeddings are computed elsewhere and ingested from files. Queries
//! are an exhaustive scan; ties keep database insertion order.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("embedding parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("pose database is empty")]
    EmptyDatabase,
    #[error("dimension mismatch: expected {expected}, found {found}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Dimension {
        expected: usize,
        found: usize,
        context: Option<String>,
    },
    #[error("duplicate entry_id `{0}`")]
    DuplicateId(String),
    #[error("zero-norm embedding{}", .0.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    ZeroNorm(Option<String>),
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("top-k {k} out of range 1..={available}")]
    KOutOfRange { k: usize, available: usize },
}

/// A dense real vector whose dimension is its length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.is_empty() {
            return Err(RetrievalError::Dimension {
                expected: 1,
                found: 0,
                context: Some("embedding must have positive dimension".into()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingFile {
    dim: usize,
    values: Vec<f64>,
}

/// Parses an embedding document `{"dim": n, "values": [...]}`.
pub fn parse_embedding(text: &str) -> Result<EmbeddingVector, RetrievalError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: EmbeddingFile =
        serde_path_to_error::deserialize(de).map_err(|e| RetrievalError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
    if raw.dim != raw.values.len() {
        return Err(RetrievalError::Parse {
            path: "values".into(),
            message: format!("declared dim {} but {} values", raw.dim, raw.values.len()),
        });
    }
    EmbeddingVector::new(raw.values)
}

/// Renders an embedding in the `{"dim", "values"}` schema.
pub fn serialize_embedding(e: &EmbeddingVector) -> String {
    let doc = serde_json::json!({ "dim": e.dim(), "values": e.values() });
    let mut s = serde_json::to_string(&doc).expect("json values serialize");
    s.push('\n');
    s
}

/// Cosine similarity `a.b / (|a| |b|)`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::Dimension {
            expected: a.dim(),
            found: b.dim(),
            context: None,
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroNorm(None));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseDbEntry {
    pub entry_id: String,
    pub label: String,
    pub embedding: EmbeddingVector,
    pub pose_video_path: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    entry_id: String,
    label: String,
    embedding: Vec<f64>,
    pose_video_path: String,
}

/// Parses a database manifest: an array of
/// `{entry_id, label, embedding: [reals], pose_video_path}`.
pub fn parse_database_manifest(text: &str) -> Result<Vec<PoseDbEntry>, RetrievalError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: Vec<RawEntry> =
        serde_path_to_error::deserialize(de).map_err(|e| RetrievalError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let embedding = EmbeddingVector::new(r.embedding).map_err(|e| RetrievalError::Parse {
                path: format!("[{i}].embedding"),
                message: e.to_string(),
            })?;
            Ok(PoseDbEntry {
                entry_id: r.entry_id,
                label: r.label,
                embedding,
                pose_video_path: r.pose_video_path,
            })
        })
        .collect()
}

/// Immutable, insertion-ordered index of labeled pose videos.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDatabase {
    entries: Vec<PoseDbEntry>,
    dim: usize,
}

impl PoseDatabase {
    pub fn entries(&self) -> &[PoseDbEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, entry_id: &str) -> Option<&PoseDbEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }
}

pub fn build_index(entries: Vec<PoseDbEntry>) -> Result<PoseDatabase, RetrievalError> {
    let dim = entries
        .first()
        .ok_or(RetrievalError::EmptyDatabase)?
        .embedding
        .dim();
    let mut ids = HashSet::new();
    for e in &entries {
        if e.embedding.dim() != dim {
            return Err(RetrievalError::Dimension {
                expected: dim,
                found: e.embedding.dim(),
                context: Some(format!("entry `{}`", e.entry_id)),
            });
        }
        if !ids.insert(e.entry_id.as_str()) {
            return Err(RetrievalError::DuplicateId(e.entry_id.clone()));
        }
        if e.embedding.norm() == 0.0 {
            return Err(RetrievalError::ZeroNorm(Some(format!(
                "entry `{}`",
                e.entry_id
            ))));
        }
    }
    Ok(PoseDatabase { entries, dim })
}

/// One ranked retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedMatch {
    pub entry_id: String,
    pub score: f64,
    /// Position of the entry in the database.
    pub index: usize,
}

/// Top-`k` entries by descending cosine score against `q`.
pub fn query(
    db: &PoseDatabase,
    q: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RankedMatch>, RetrievalError> {
    if q.dim() != db.dim {
        return Err(RetrievalError::Dimension {
            expected: db.dim,
            found: q.dim(),
            context: Some("query embedding".into()),
        });
    }
    if k == 0 || k > db.len() {
        return Err(RetrievalError::KOutOfRange {
            k,
            available: db.len(),
        });
    }
    if q.norm() == 0.0 {
        return Err(RetrievalError::ZeroNorm(Some("query embedding".into())));
    }
    let mut scored = db
        .entries
        .iter()
        .enumerate()
        .map(|(index, e)| {
            Ok(RankedMatch {
                entry_id: e.entry_id.clone(),
                score: cosine(q, &e.embedding)?,
                index,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    // stable: equal scores keep insertion order
    // scores are finite; partial_cmp keeps -0.0 and 0.0 tied
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn emb(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn entry(id: &str, v: &[f64]) -> PoseDbEntry {
        PoseDbEntry {
            entry_id: id.into(),
            label: id.replace('_', " "),
            embedding: emb(v),
            pose_video_path: format!("{id}.json"),
        }
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine(&emb(&[1.0, 0.0, 0.0]), &emb(&[1.0, 0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&emb(&[1.0, 1.0]), &emb(&[-1.0, -1.0])).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&emb(&[1.0]), &emb(&[1.0, 0.0])),
            Err(RetrievalError::Dimension { .. })
        ));
        assert!(matches!(
            cosine(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])),
            Err(RetrievalError::ZeroNorm(_))
        ));
    }

    #[test]
    fn build_examples() {
        let db = build_index(vec![
            entry("sit", &[1.0, 0.0, 0.0, 0.0]),
            entry("dance", &[0.0, 1.0, 0.0, 0.0]),
            entry("fall_down", &[0.0, 0.0, 1.0, 0.0]),
        ])
        .unwrap();
        assert_eq!((db.dim(), db.len()), (4, 3));

        assert!(matches!(
            build_index(vec![entry("a", &[1.0; 4]), entry("b", &[1.0; 8])]),
            Err(RetrievalError::Dimension { expected: 4, found: 8, .. })
        ));
        assert_eq!(
            build_index(vec![entry("sit", &[1.0; 4]), entry("sit", &[2.0; 4])]),
            Err(RetrievalError::DuplicateId("sit".into()))
        );
        assert_eq!(build_index(vec![]), Err(RetrievalError::EmptyDatabase));
        assert!(matches!(
            build_index(vec![entry("z", &[0.0; 4])]),
            Err(RetrievalError::ZeroNorm(_))
        ));
    }

    #[test]
    fn query_exact_hit_and_ties() {
        let db = build_index(vec![
            entry("sit", &[1.0, 0.0, 0.0]),
            entry("dance", &[0.2, 0.9, 0.1]),
            entry("wave", &[0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let top = query(&db, &emb(&[0.2, 0.9, 0.1]), 1).unwrap();
        assert_eq!(top[0].entry_id, "dance");
        assert_abs_diff_eq!(top[0].score, 1.0, epsilon = 1e-15);

        let db = build_index(vec![
            entry("a", &[1.0, 0.0, 0.0]),
            entry("b", &[0.0, 1.0, 0.0]),
            entry("c", &[1.0, 1.0, 0.0]),
        ])
        .unwrap();
        let all = query(&db, &emb(&[0.0, 0.0, 3.0]), 3).unwrap();
        let ids: Vec<_> = all.iter().map(|m| m.entry_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(all.iter().all(|m| m.score == 0.0));
    }

    #[test]
    fn signed_zero_scores_tie() {
        let db = build_index(vec![entry("a", &[-1.0, 0.0]), entry("b", &[1.0, 0.0])]).unwrap();
        let ids: Vec<usize> = query(&db, &emb(&[0.0, -1.0]), 2).unwrap().iter().map(|m| m.index).collect();
        assert_eq!(ids, [0, 1]);
    }

    #[test]
    fn query_errors() {
        let db = build_index(vec![entry("a", &[1.0, 0.0])]).unwrap();
        assert!(matches!(
            query(&db, &emb(&[1.0, 0.0]), 2),
            Err(RetrievalError::KOutOfRange { k: 2, available: 1 })
        ));
        assert!(matches!(
            query(&db, &emb(&[1.0, 0.0]), 0),
            Err(RetrievalError::KOutOfRange { .. })
        ));
        assert!(matches!(
            query(&db, &emb(&[1.0, 0.0, 0.0]), 1),
            Err(RetrievalError::Dimension { .. })
        ));
        assert!(matches!(
            query(&db, &emb(&[0.0, 0.0]), 1),
            Err(RetrievalError::ZeroNorm(_))
        ));
    }

    #[test]
    fn embedding_file_roundtrip_and_errors() {
        let e = parse_embedding(r#"{"dim": 3, "values": [0.5, -1, 2.25]}"#).unwrap();
        assert_eq!(e.values(), &[0.5, -1.0, 2.25]);
        assert_eq!(parse_embedding(&serialize_embedding(&e)).unwrap(), e);
        assert!(matches!(
            parse_embedding(r#"{"dim": 2, "values": [0.5]}"#),
            Err(RetrievalError::Parse { .. })
        ));
        assert!(matches!(
            parse_embedding(r#"{"values": [0.5]}"#),
            Err(RetrievalError::Parse { .. })
        ));
    }

    #[test]
    fn manifest_parse() {
        let text = r#"[{"entry_id": "sit", "label": "sit down", "embedding": [1, 0], "pose_video_path": "poses/sit.json"}]"#;
        let entries = parse_database_manifest(text).unwrap();
        assert_eq!(entries[0].label, "sit down");
        assert_eq!(entries[0].embedding.dim(), 2);
        let bad = r#"[{"entry_id": "sit", "label": "sit down", "embedding": [], "pose_video_path": "x"}]"#;
        assert!(matches!(
            parse_database_manifest(bad),
            Err(RetrievalError::Parse { path, .. }) if path == "[0].embedding"
        ));
    }
}

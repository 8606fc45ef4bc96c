use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(utterance_id: impl Into<String>, speaker_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            vector,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| v as f64).collect()
    }
}

/// A validated N x D table of embeddings.
///
/// Construction goes through [`EmbeddingDataset::new`], which enforces a
/// shared dimension, finite components, unique utterance ids and at least
/// one record. Fields are private so the invariants cannot be broken later.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    source_tag: String,
}

impl EmbeddingDataset {
    pub fn new(records: Vec<EmbeddingRecord>, source_tag: impl Into<String>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::validation("dataset must contain at least one record"))?;
        let dim = first.vector.len();
        if dim == 0 {
            return Err(Error::validation("embedding dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (row, rec) in records.iter().enumerate() {
            if rec.vector.len() != dim {
                return Err(Error::validation(format!(
                    "record {row} ({}) has dimension {}, expected {dim}",
                    rec.utterance_id,
                    rec.vector.len()
                )));
            }
            if let Some(i) = rec.vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "record {row} ({}) component {i} is not finite",
                    rec.utterance_id
                )));
            }
            if !seen.insert(rec.utterance_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate utterance_id {:?} at record {row}",
                    rec.utterance_id
                )));
            }
        }
        Ok(Self {
            dim,
            records,
            source_tag: source_tag.into(),
        })
    }

    /// Build a dataset from f64 rows; speaker and utterance ids are produced
    /// by `ids(row)`.
    pub fn from_rows<F>(rows: &[Vec<f64>], source_tag: &str, mut ids: F) -> Result<Self>
    where
        F: FnMut(usize) -> (String, String),
    {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let (utt, spk) = ids(i);
                EmbeddingRecord::new(utt, spk, row.iter().map(|&v| v as f32).collect())
            })
            .collect();
        Self::new(records, source_tag)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn record(&self, row: usize) -> &EmbeddingRecord {
        &self.records[row]
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn set_source_tag(&mut self, tag: impl Into<String>) {
        self.source_tag = tag.into();
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    /// All vectors widened to f64, row-major.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(EmbeddingRecord::to_f64).collect()
    }

    /// speaker_id -> row indices, in row order.
    pub fn speaker_index(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (row, rec) in self.records.iter().enumerate() {
            map.entry(rec.speaker_id.as_str()).or_default().push(row);
        }
        map
    }

    pub fn row_of(&self, utterance_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.utterance_id == utterance_id)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize], source_tag: &str) -> Result<Self> {
        let records = rows.iter().map(|&r| self.records[r].clone()).collect();
        Self::new(records, source_tag)
    }
}

//! Word and character error rates.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Position, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptPair {
    #[serde(default)]
    pub utterance_id: String,
    pub reference: String,
    pub hypothesis: String,
}

impl TranscriptPair {
    pub fn new(reference: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            utterance_id: String::new(),
            reference: reference.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

/// Lowercase, drop punctuation, collapse runs of whitespace.
pub fn normalize_text(s: &str) -> String {
    let kept: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Minimum number of substitutions, deletions and insertions turning
/// `reference` into `hypothesis`.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

fn normalized_pair(pair: &TranscriptPair) -> Result<(String, String)> {
    let r = normalize_text(&pair.reference);
    if r.is_empty() {
        return Err(Error::validation(format!(
            "reference for {:?} is empty after normalization",
            pair.utterance_id
        )));
    }
    Ok((r, normalize_text(&pair.hypothesis)))
}

pub fn wer(pair: &TranscriptPair) -> Result<f64> {
    let (r, h) = normalized_pair(pair)?;
    let rw: Vec<&str> = r.split(' ').collect();
    let hw: Vec<&str> = h.split(' ').filter(|w| !w.is_empty()).collect();
    Ok(edit_distance(&rw, &hw) as f64 / rw.len() as f64)
}

pub fn cer(pair: &TranscriptPair) -> Result<f64> {
    let (r, h) = normalized_pair(pair)?;
    let rc: Vec<char> = r.chars().collect();
    let hc: Vec<char> = h.chars().collect();
    Ok(edit_distance(&rc, &hc) as f64 / rc.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub wer: f64,
    pub cer: f64,
    pub utterances: usize,
}

/// Per-utterance WER and CER averaged over the set.
pub fn score_transcripts(pairs: &[TranscriptPair]) -> Result<TextScores> {
    if pairs.is_empty() {
        return Err(Error::validation("no transcript pairs"));
    }
    let mut w = 0.0;
    let mut c = 0.0;
    for p in pairs {
        w += wer(p)?;
        c += cer(p)?;
    }
    let n = pairs.len() as f64;
    Ok(TextScores {
        wer: w / n,
        cer: c / n,
        utterances: pairs.len(),
    })
}

/// Read `{"utterance_id", "reference", "hypothesis"}` records, one per line.
pub fn load_transcripts(path: &Path) -> Result<Vec<TranscriptPair>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: TranscriptPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            position: Position::Line(i + 1),
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

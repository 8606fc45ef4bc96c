//! Cosine-similarity statistics over embedding sets.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EmbeddingDataset;
use crate::{par, rng};

const PAIR_STREAM: u64 = 0x5041_4952;
const NATURAL_STREAM: u64 = 0x4e41_5455;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine of a zero vector is undefined"));
    }
    Ok(cos_with_norms(a, b, na, nb))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cos_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Streaming mean and population variance, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, o: &RunningStats) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        self.mean += delta * o.n as f64 / n as f64;
        self.m2 += o.m2 + delta * delta * self.n as f64 * o.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn summary(&self, what: &str) -> Result<Similarity> {
        if self.n == 0 {
            return Err(Error::validation(format!("{what}: no pairs to score")));
        }
        Ok(Similarity {
            mean: self.mean,
            std: (self.m2 / self.n as f64).max(0.0).sqrt(),
            pair_count: self.n,
        })
    }
}

/// Mean and population standard deviation of a set of cosines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub mean: f64,
    pub std: f64,
    pub pair_count: u64,
}

/// Optional seeded subsampling of pair sets.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairCap {
    pub max_pairs: Option<usize>,
    pub seed: u64,
}

struct Table {
    rows: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl Table {
    fn new(set: &EmbeddingDataset) -> Result<Self> {
        let rows = set.rows_f64();
        let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
        if let Some(i) = norms.iter().position(|n| *n == 0.0) {
            return Err(Error::validation(format!(
                "utterance {} has a zero embedding",
                set.record(i).utterance_id
            )));
        }
        Ok(Self { rows, norms })
    }

    fn cos(&self, i: usize, other: &Table, j: usize) -> f64 {
        cos_with_norms(&self.rows[i], &other.rows[j], self.norms[i], other.norms[j])
    }
}

fn check_dims(a: &EmbeddingDataset, b: &EmbeddingDataset) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

fn merge_all(parts: &[RunningStats]) -> RunningStats {
    let mut total = RunningStats::default();
    for p in parts {
        total.merge(p);
    }
    total
}

/// Pairwise similarity over all unordered pairs of distinct rows of one set.
pub fn pairwise_within(set: &EmbeddingDataset, cap: PairCap) -> Result<Similarity> {
    let t = Table::new(set)?;
    let n = set.len();
    let total = n * n.saturating_sub(1) / 2;
    if let Some(max) = cap.max_pairs.filter(|&m| m < total) {
        let mut r = rng::rng_for(cap.seed, &[PAIR_STREAM, 0]);
        let mut s = RunningStats::default();
        while s.count() < max as u64 {
            let (i, j) = (r.random_range(0..n), r.random_range(0..n));
            if i != j {
                s.push(t.cos(i, &t, j));
            }
        }
        return s.summary("pairwise");
    }
    let parts = par::map_range(n, |i| {
        let mut s = RunningStats::default();
        for j in i + 1..n {
            s.push(t.cos(i, &t, j));
        }
        s
    });
    merge_all(&parts).summary("pairwise")
}

/// Pairwise similarity over the cross product of two sets, optionally
/// skipping pairs that share an utterance id.
pub fn pairwise_across(
    a: &EmbeddingDataset,
    b: &EmbeddingDataset,
    exclude_same_utterance: bool,
    cap: PairCap,
) -> Result<Similarity> {
    check_dims(a, b)?;
    let (ta, tb) = (Table::new(a)?, Table::new(b)?);
    let skip = |i: usize, j: usize| exclude_same_utterance && a.record(i).utterance_id == b.record(j).utterance_id;
    if let Some(max) = cap.max_pairs.filter(|&m| m < a.len() * b.len()) {
        let mut r = rng::rng_for(cap.seed, &[PAIR_STREAM, 1]);
        let mut s = RunningStats::default();
        let mut attempts = 0usize;
        while s.count() < max as u64 && attempts < 100 * max.max(1) {
            attempts += 1;
            let (i, j) = (r.random_range(0..a.len()), r.random_range(0..b.len()));
            if !skip(i, j) {
                s.push(ta.cos(i, &tb, j));
            }
        }
        return s.summary("pairwise");
    }
    let parts = par::map_range(a.len(), |i| {
        let mut s = RunningStats::default();
        for j in 0..b.len() {
            if !skip(i, j) {
                s.push(ta.cos(i, &tb, j));
            }
        }
        s
    });
    merge_all(&parts).summary("pairwise")
}

/// Similarity over rows of `a` and `b` that share an utterance id.
pub fn corresponding(a: &EmbeddingDataset, b: &EmbeddingDataset) -> Result<Similarity> {
    check_dims(a, b)?;
    let (ta, tb) = (Table::new(a)?, Table::new(b)?);
    let by_id: HashMap<&str, usize> = b
        .records()
        .iter()
        .enumerate()
        .map(|(j, r)| (r.utterance_id.as_str(), j))
        .collect();
    let mut s = RunningStats::default();
    for (i, r) in a.records().iter().enumerate() {
        if let Some(&j) = by_id.get(r.utterance_id.as_str()) {
            s.push(ta.cos(i, &tb, j));
        }
    }
    s.summary("corresponding (no shared utterance ids)")
}

/// Which converted rows belong to which generated speaker, and which
/// natural speaker each row was converted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedJoin {
    pub groups: BTreeMap<String, Vec<usize>>,
    pub source_speaker: Vec<String>,
}

impl GeneratedJoin {
    /// Groups come from `converted`'s speaker ids; source speakers from the
    /// `sources` row with the same utterance id.
    pub fn from_sets(converted: &EmbeddingDataset, sources: &EmbeddingDataset) -> Result<Self> {
        let by_id: HashMap<&str, &str> = sources
            .records()
            .iter()
            .map(|r| (r.utterance_id.as_str(), r.speaker_id.as_str()))
            .collect();
        let source_speaker = converted
            .records()
            .iter()
            .map(|r| {
                by_id.get(r.utterance_id.as_str()).map(|s| s.to_string()).ok_or_else(|| {
                    Error::validation(format!("converted utterance {} has no source row", r.utterance_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let groups = converted
            .speaker_index()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Ok(Self { groups, source_speaker })
    }
}

/// Similarity between conversions to the same generated speaker from
/// different source speakers.
pub fn stability(converted: &EmbeddingDataset, join: &GeneratedJoin) -> Result<Similarity> {
    if join.source_speaker.len() != converted.len() {
        return Err(Error::validation("join table does not match the converted set"));
    }
    let t = Table::new(converted)?;
    let groups: Vec<&Vec<usize>> = join.groups.values().collect();
    let parts = par::map_slice(&groups, |rows| {
        let mut s = RunningStats::default();
        for (x, &i) in rows.iter().enumerate() {
            for &j in &rows[x + 1..] {
                if join.source_speaker[i] != join.source_speaker[j] {
                    s.push(t.cos(i, &t, j));
                }
            }
        }
        s
    });
    merge_all(&parts).summary("stability (no generated speaker has conversions from two source speakers)")
}

/// Similarity between different utterances of the same natural speaker:
/// every such pair when there are at most `m`, otherwise `m` distinct pairs
/// drawn uniformly.
pub fn natural_consistency(data: &EmbeddingDataset, m: usize, seed: u64) -> Result<Similarity> {
    let t = Table::new(data)?;
    let groups: Vec<Vec<usize>> = data.speaker_index().into_values().filter(|g| g.len() >= 2).collect();
    if groups.is_empty() {
        return Err(Error::validation("natural consistency needs a speaker with >= 2 utterances"));
    }
    let mut offsets = Vec::with_capacity(groups.len() + 1);
    offsets.push(0usize);
    for g in &groups {
        offsets.push(offsets.last().expect("non-empty") + g.len() * (g.len() - 1) / 2);
    }
    let total = *offsets.last().expect("non-empty");
    let picks: Vec<usize> = if total <= m {
        (0..total).collect()
    } else {
        let mut r = rng::rng_for(seed, &[NATURAL_STREAM]);
        let mut v = index::sample(&mut r, total, m).into_vec();
        v.sort_unstable();
        v
    };
    let mut s = RunningStats::default();
    for p in picks {
        let g = offsets.partition_point(|&o| o <= p) - 1;
        let (i, j) = unrank_pair(p - offsets[g], groups[g].len());
        s.push(t.cos(groups[g][i], &t, groups[g][j]));
    }
    s.summary("natural consistency")
}

/// Inverse of the row-major enumeration of pairs (i < j) over n items.
fn unrank_pair(mut p: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= n - 1 - i {
        p -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

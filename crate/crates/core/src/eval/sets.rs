//! Evaluation sets and the conversion backend that produces the converted ones.

use serde::{Deserialize, Serialize};

use super::similarity::GeneratedJoin;
use crate::error::{Error, Result};
use crate::store::{EmbeddingDataset, EmbeddingRecord};
use crate::{par, rng};

use rand::seq::index;
use rand::Rng as _;

const GT_STREAM: u64 = 0x4754_5345;
const PARTNER_STREAM: u64 = 0x5041_5254;
pub const S_SYN_STREAM: u64 = 1;
pub const S_RECON_STREAM: u64 = 2;
pub const G_SYN_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub m: usize,
    pub seed: u64,
    pub pairwise_sample_cap: Option<usize>,
    /// Number of distinct generated speakers the ground-truth rows are
    /// spread over when building the generated-speaker set.
    pub generated_speakers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            seed: 0,
            pairwise_sample_cap: None,
            generated_speakers: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::validation("m must be >= 2"));
        }
        if self.generated_speakers == 0 {
            return Err(Error::validation("generated_speakers must be >= 1"));
        }
        if self.pairwise_sample_cap == Some(0) {
            return Err(Error::validation("pairwise_sample_cap must be >= 1"));
        }
        Ok(())
    }
}

/// Ground truth plus the sets derived from it. Every optional set is
/// row-aligned with `gt` and shares its utterance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSets {
    pub gt: EmbeddingDataset,
    /// For each gt row, a different utterance of the same speaker. The same
    /// utterance may be picked for several gt rows, so this is a plain list.
    pub gt_same_speaker: Vec<EmbeddingRecord>,
    pub s_syn: Option<EmbeddingDataset>,
    pub s_recon: Option<EmbeddingDataset>,
    pub g_syn: Option<EmbeddingDataset>,
    pub g_syn_join: Option<GeneratedJoin>,
}

/// Draw `m` ground-truth utterances from speakers with at least two
/// utterances, and pair each with another utterance of its speaker.
pub fn build_eval_sets(data: &EmbeddingDataset, config: &EvalConfig) -> Result<EvalSets> {
    config.validate()?;
    let index_by_speaker = data.speaker_index();
    let eligible: Vec<usize> = index_by_speaker
        .values()
        .filter(|rows| rows.len() >= 2)
        .flatten()
        .copied()
        .collect();
    if eligible.len() < config.m {
        return Err(Error::validation(format!(
            "need {} utterances from speakers with >= 2 utterances, found {}",
            config.m,
            eligible.len()
        )));
    }
    let mut r = rng::rng_for(config.seed, &[GT_STREAM]);
    let gt_rows: Vec<usize> = index::sample(&mut r, eligible.len(), config.m)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let mut r = rng::rng_for(config.seed, &[PARTNER_STREAM]);
    let gt_same_speaker = gt_rows
        .iter()
        .map(|&row| {
            let rec = data.record(row);
            let peers = &index_by_speaker[rec.speaker_id.as_str()];
            let mut pick = peers[r.random_range(0..peers.len() - 1)];
            if pick == row {
                pick = *peers.last().expect("at least two peers");
            }
            data.record(pick).clone()
        })
        .collect();
    Ok(EvalSets {
        gt: data.select(&gt_rows, "gt")?,
        gt_same_speaker,
        s_syn: None,
        s_recon: None,
        g_syn: None,
        g_syn_join: None,
    })
}

/// Converts a source utterance to a target speaker and returns the speaker
/// embedding measured on the result.
pub trait ConversionBackend: Sync {
    /// `stream` identifies the call (set and row) for backends that need
    /// per-call randomness.
    fn convert(&self, stream: &[u64], source: &EmbeddingRecord, target_speaker_id: &str, target: &[f64]) -> Result<EmbeddingRecord>;
}

/// Offline stand-in for a voice-conversion system: the output embedding is
/// the target plus seeded Gaussian noise.
pub fn stub_convert(
    source: &EmbeddingRecord,
    target_speaker_id: &str,
    target: &[f64],
    noise_scale: f64,
    seed: u64,
) -> Result<EmbeddingRecord> {
    if source.vector.len() != target.len() {
        return Err(Error::validation(format!(
            "source has dimension {}, target {}",
            source.vector.len(),
            target.len()
        )));
    }
    let mut r = rng::rng(seed);
    let noise = rng::normal_vec(&mut r, target.len());
    let v = target
        .iter()
        .zip(&noise)
        .map(|(t, e)| (t + noise_scale * e) as f32)
        .collect();
    Ok(EmbeddingRecord::new(source.utterance_id.clone(), target_speaker_id, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubBackend {
    pub noise_scale: f64,
    pub seed: u64,
}

impl ConversionBackend for StubBackend {
    fn convert(&self, stream: &[u64], source: &EmbeddingRecord, target_speaker_id: &str, target: &[f64]) -> Result<EmbeddingRecord> {
        stub_convert(source, target_speaker_id, target, self.noise_scale, rng::derive(self.seed, stream))
    }
}

fn convert_rows<F>(sets: &EvalSets, backend: &dyn ConversionBackend, set: u64, tag: &str, target: F) -> Result<EmbeddingDataset>
where
    F: Fn(usize) -> Result<(String, Vec<f64>)> + Sync,
{
    let out = par::map_range(sets.gt.len(), |i| {
        let (speaker, t) = target(i)?;
        backend.convert(&[set, i as u64], sets.gt.record(i), &speaker, &t)
    });
    EmbeddingDataset::new(out.into_iter().collect::<Result<Vec<_>>>()?, tag)
}

impl EvalSets {
    /// Each gt utterance converted to the embedding of its same-speaker partner.
    pub fn synthesize_same_speaker(&mut self, backend: &dyn ConversionBackend) -> Result<()> {
        let set = convert_rows(self, backend, S_SYN_STREAM, "s_syn", |i| {
            let p = &self.gt_same_speaker[i];
            Ok((p.speaker_id.clone(), p.to_f64()))
        })?;
        self.s_syn = Some(set);
        Ok(())
    }

    /// Each gt utterance converted to `targets[i]`, typically the model's
    /// reconstruction of the gt embedding.
    pub fn synthesize_reconstruction(&mut self, backend: &dyn ConversionBackend, targets: &[Vec<f64>]) -> Result<()> {
        if targets.len() != self.gt.len() {
            return Err(Error::validation(format!(
                "{} reconstruction targets for {} gt rows",
                targets.len(),
                self.gt.len()
            )));
        }
        let set = convert_rows(self, backend, S_RECON_STREAM, "s_recon", |i| {
            Ok((self.gt.record(i).speaker_id.clone(), targets[i].clone()))
        })?;
        self.s_recon = Some(set);
        Ok(())
    }

    /// Gt row `i` converted to generated speaker `i mod G`, where the first
    /// `G = min(speakers, generated.len())` generated records are used.
    pub fn synthesize_generated(&mut self, backend: &dyn ConversionBackend, generated: &EmbeddingDataset, speakers: usize) -> Result<()> {
        if generated.dim() != self.gt.dim() {
            return Err(Error::validation("generated embeddings have a different dimension"));
        }
        let g = speakers.min(generated.len()).max(1);
        let set = convert_rows(self, backend, G_SYN_STREAM, "g_syn", |i| {
            let t = generated.record(i % g);
            Ok((t.speaker_id.clone(), t.to_f64()))
        })?;
        self.g_syn_join = Some(GeneratedJoin::from_sets(&set, &self.gt)?);
        self.g_syn = Some(set);
        Ok(())
    }
}

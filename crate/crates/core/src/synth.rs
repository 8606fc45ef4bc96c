//! Planted speaker mixtures for desk-scale experiments.
//!
//! Speakers are grouped into `clusters` super-clusters. Each super-cluster
//! centre is `offset + N(0, cluster_spread^2)` per feature, each speaker centre
//! is its super-cluster centre plus `N(0, spread^2)`, and each utterance is
//! its speaker centre plus `N(0, within_std^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::store::{EmbeddingDataset, EmbeddingRecord};

const CLUSTER_STREAM: u64 = 0x434c_5553;
const SPEAKER_STREAM: u64 = 0x5350_4b52;
const UTTERANCE_STREAM: u64 = 0x5554_5452;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub dim: usize,
    pub clusters: usize,
    pub cluster_spread: f64,
    pub spread: f64,
    pub within_std: f64,
    pub offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            speakers: 10,
            utterances_per_speaker: 20,
            dim: 16,
            clusters: 2,
            cluster_spread: 1.0,
            spread: 0.3,
            within_std: 0.1,
            offset: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.utterances_per_speaker == 0 || self.dim == 0 || self.clusters == 0 {
            return Err(Error::validation("speakers, utterances_per_speaker, dim and clusters must be >= 1"));
        }
        let scales = [self.cluster_spread, self.spread, self.within_std];
        if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || !self.offset.is_finite() {
            return Err(Error::validation("spreads must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Generating parameters, written next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub cluster_centers: Vec<Vec<f64>>,
    pub speaker_centers: Vec<Vec<f64>>,
    pub speaker_cluster: Vec<usize>,
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:04}")
}

pub fn utterance_id(s: usize, u: usize) -> String {
    format!("spk{s:04}-utt{u:04}")
}

pub fn generate(config: &SynthConfig) -> Result<(EmbeddingDataset, SynthTruth)> {
    config.validate()?;
    let d = config.dim;
    let cluster_centers: Vec<Vec<f64>> = (0..config.clusters)
        .map(|c| {
            let mut r = rng::rng_for(config.seed, &[CLUSTER_STREAM, c as u64]);
            rng::normal_vec(&mut r, d)
                .iter()
                .map(|e| config.offset + config.cluster_spread * e)
                .collect()
        })
        .collect();
    let speaker_cluster: Vec<usize> = (0..config.speakers).map(|s| s % config.clusters).collect();
    let speaker_centers: Vec<Vec<f64>> = (0..config.speakers)
        .map(|s| {
            let mut r = rng::rng_for(config.seed, &[SPEAKER_STREAM, s as u64]);
            let base = &cluster_centers[speaker_cluster[s]];
            base.iter()
                .zip(rng::normal_vec(&mut r, d))
                .map(|(b, e)| b + config.spread * e)
                .collect()
        })
        .collect();
    let mut records = Vec::with_capacity(config.speakers * config.utterances_per_speaker);
    for (s, center) in speaker_centers.iter().enumerate() {
        for u in 0..config.utterances_per_speaker {
            let mut r = rng::rng_for(config.seed, &[UTTERANCE_STREAM, s as u64, u as u64]);
            let v = center
                .iter()
                .zip(rng::normal_vec(&mut r, d))
                .map(|(c, e)| (c + config.within_std * e) as f32)
                .collect();
            records.push(EmbeddingRecord::new(utterance_id(s, u), speaker_id(s), v));
        }
    }
    let data = EmbeddingDataset::new(records, format!("synth:seed={}", config.seed))?;
    Ok((
        data,
        SynthTruth {
            config: config.clone(),
            cluster_centers,
            speaker_centers,
            speaker_cluster,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let (d, t) = generate(&SynthConfig::default()).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.dim(), 16);
        assert_eq!(d.speaker_index().len(), 10);
        assert_eq!(t.speaker_centers.len(), 10);
    }

    #[test]
    fn seeded() {
        let c = SynthConfig::default();
        assert_eq!(generate(&c).unwrap().0, generate(&c).unwrap().0);
        let other = SynthConfig { seed: 1, ..c.clone() };
        assert_ne!(generate(&c).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn zero_within_std_puts_utterances_on_centres() {
        let c = SynthConfig {
            within_std: 0.0,
            ..SynthConfig::default()
        };
        let (d, t) = generate(&c).unwrap();
        let r = d.record(d.row_of(&utterance_id(3, 7)).unwrap());
        for (a, b) in r.vector.iter().zip(&t.speaker_centers[3]) {
            assert_eq!(*a, *b as f32);
        }
    }
}

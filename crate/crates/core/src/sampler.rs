//! Ancestral sampling from a trained hierarchical VAE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvae::tape::Tape;
use crate::hvae::{HvaeModel, Latents};
use crate::store::{EmbeddingDataset, EmbeddingRecord, NormalizationStats};
use crate::{par, rng};

const SAMPLE_STREAM: u64 = 0x5341_4d50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub count: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl SampleRequest {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            temperature: 1.0,
            seed,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::validation("sample count must be >= 1"));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::validation(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Speaker (and utterance) id given to the `index`-th generated vector.
pub fn generated_id(seed: u64, index: usize) -> String {
    format!("gen-{seed}-{index}")
}

fn stats(model: &HvaeModel) -> Result<&NormalizationStats> {
    model
        .norm_stats()
        .ok_or_else(|| Error::State("model has no normalization statistics; train or load a checkpoint first".into()))
}

fn noise_for(model: &HvaeModel, seed: u64, index: usize) -> Vec<Vec<f64>> {
    let mut r = rng::rng_for(seed, &[SAMPLE_STREAM, index as u64]);
    let dz = model.spec().dims_per_group;
    (0..model.spec().num_groups()).map(|_| rng::normal_vec(&mut r, dz)).collect()
}

/// Latent groups and decoded mean (normalized space) of one ancestral draw.
fn draw(model: &HvaeModel, temperature: f64, seed: u64, index: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let noise = noise_for(model, seed, index);
    let mut t = Tape::new(model.params());
    let tr = model.forward(&mut t, Latents::Prior { temperature, noise: &noise });
    let z = tr.groups.iter().map(|g| t.value(g.z).to_vec()).collect();
    (z, t.value(tr.x_mean).to_vec())
}

/// Latent groups of the `index`-th draw for `seed`; every prior's standard
/// deviation is scaled by `temperature`.
pub fn sample_latents(model: &HvaeModel, temperature: f64, seed: u64, index: usize) -> Vec<Vec<f64>> {
    draw(model, temperature, seed, index).0
}

/// Decoded means in normalized space, one per requested sample.
pub fn sample_normalized(model: &HvaeModel, req: &SampleRequest) -> Result<Vec<Vec<f64>>> {
    req.validate()?;
    stats(model)?;
    Ok(par::map_range(req.count, |i| draw(model, req.temperature, req.seed, i).1))
}

/// Draw `req.count` novel embeddings. Each gets its own synthetic speaker id.
pub fn sample_embeddings(model: &HvaeModel, req: &SampleRequest) -> Result<EmbeddingDataset> {
    let norm = stats(model)?;
    let rows = sample_normalized(model, req)?;
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let v = norm.denormalize(y)?;
            let id = generated_id(req.seed, i);
            Ok(EmbeddingRecord::new(id.clone(), id, v.iter().map(|&x| x as f32).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingDataset::new(records, format!("hvae:T={}", req.temperature))
}

/// Encode to posterior means, decode, and map back to the raw space.
pub fn reconstruct(model: &HvaeModel, x: &[f64]) -> Result<Vec<f64>> {
    let norm = stats(model)?;
    if x.len() != model.spec().input_dim {
        return Err(Error::validation(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            model.spec().input_dim
        )));
    }
    let y = reconstruct_normalized(model, &norm.normalize(x)?)?;
    norm.denormalize(&y)
}

/// Reconstruction of an already-normalized vector, staying in normalized space.
pub fn reconstruct_normalized(model: &HvaeModel, x_norm: &[f64]) -> Result<Vec<f64>> {
    let q = model.encode(x_norm)?;
    let z: Vec<Vec<f64>> = q.into_iter().map(|g| g.mean).collect();
    Ok(model.decode(&z)?.0)
}

/// Reconstruct every record of `data`, keeping ids.
pub fn reconstruct_dataset(model: &HvaeModel, data: &EmbeddingDataset) -> Result<EmbeddingDataset> {
    let outs = par::map_slice(data.records(), |r| reconstruct(model, &r.to_f64()));
    let records = outs
        .into_iter()
        .zip(data.records())
        .map(|(v, r)| {
            Ok(EmbeddingRecord::new(
                r.utterance_id.clone(),
                r.speaker_id.clone(),
                v?.iter().map(|&x| x as f32).collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingDataset::new(records, "hvae:recon")
}

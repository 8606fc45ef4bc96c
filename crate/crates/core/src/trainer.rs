//! Mini-batch optimisation of the hierarchical VAE.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvae::{self, elbo_with_grad, ElboBreakdown, HvaeModel, SeededNoise};
use crate::store::{fit_normalizer, EmbeddingDataset};
use crate::{par, rng};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = 0x4e4f_4953;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub free_bits_lambda: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub grad_clip: f64,
    /// Weight of the spectral-norm penalty on weight matrices; 0 disables it.
    pub spectral_reg: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub telemetry_path: Option<PathBuf>,
    /// Stored in every checkpoint header next to this config.
    #[serde(skip)]
    pub checkpoint_extra: serde_json::Value,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 1024,
            learning_rate: 1e-3,
            warmup_fraction: 0.3,
            free_bits_lambda: hvae::DEFAULT_FREE_BITS,
            seed: 0,
            checkpoint_every: 100,
            grad_clip: 100.0,
            spectral_reg: 0.0,
            checkpoint_path: None,
            telemetry_path: None,
            checkpoint_extra: serde_json::Value::Null,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be > 0"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return Err(Error::validation("warmup_fraction must lie in (0, 1]"));
        }
        if !(self.free_bits_lambda >= 0.0) {
            return Err(Error::validation("free_bits_lambda must be >= 0"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::validation("checkpoint_every must be >= 1"));
        }
        if !(self.grad_clip > 0.0) || !(self.spectral_reg >= 0.0) {
            return Err(Error::validation("grad_clip must be > 0 and spectral_reg >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    pub mean_total_loss: f64,
    pub mean_recon_loglik: f64,
    pub mean_kl_per_group: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub final_checkpoint: Option<PathBuf>,
}

/// Linear KL warmup: 0 at epoch 0, 1 from `warmup_fraction * epochs` on.
pub fn warmup_beta(epoch: usize, config: &TrainConfig) -> f64 {
    let ramp = config.warmup_fraction * config.epochs as f64;
    if config.warmup_fraction <= 0.0 || ramp <= 0.0 {
        return 1.0;
    }
    (epoch as f64 / ramp).min(1.0)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Adds `coef * sigma_max(W)^2` gradients for every weight matrix (conv
/// kernels flattened to [cout, cin * k]) and returns the penalty value.
fn spectral_penalty(model: &HvaeModel, grad: &mut [f64], coef: f64) -> f64 {
    let mut total = 0.0;
    for block in model.params().blocks() {
        if !block.name.ends_with(".weight") || block.shape.len() < 2 {
            continue;
        }
        let rows = block.shape[0];
        let cols = block.len / rows;
        let w = &model.params().data()[block.offset..block.offset + block.len];
        let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
        let mut u = vec![0.0; rows];
        let mut sigma = 0.0;
        for _ in 0..500 {
            let prev = sigma;
            for (r, ur) in u.iter_mut().enumerate() {
                *ur = w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 {
                break;
            }
            u.iter_mut().for_each(|x| *x /= nu);
            v.fill(0.0);
            for (r, &ur) in u.iter().enumerate() {
                for (vc, &wrc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *vc += ur * wrc;
                }
            }
            sigma = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if sigma == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= sigma);
            if (sigma - prev).abs() <= 1e-12 * sigma {
                break;
            }
        }
        total += coef * sigma * sigma;
        let g = &mut grad[block.offset..block.offset + block.len];
        for (r, &ur) in u.iter().enumerate() {
            for (c, &vc) in v.iter().enumerate() {
                g[r * cols + c] += 2.0 * coef * sigma * ur * vc;
            }
        }
    }
    total
}

fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

struct BatchOutcome {
    grad: Vec<f64>,
    terms: Vec<ElboBreakdown>,
}

fn write_checkpoint(model: &HvaeModel, config: &TrainConfig) -> Result<Option<PathBuf>> {
    match &config.checkpoint_path {
        Some(path) => {
            let extra = serde_json::json!({ "train_config": config, "run": config.checkpoint_extra });
            hvae::save_checkpoint(model, path, extra)?;
            Ok(Some(path.clone()))
        }
        None => Ok(None),
    }
}

/// Train `model` on `data`.
///
/// Raw embeddings are normalized with the model's stored statistics, which
/// are fitted on `data` first if the model has none. Parameter updates are
/// independent of the rayon thread count: per-example noise is keyed on
/// (seed, epoch, position) and gradients are reduced in a fixed order.
pub fn train(mut model: HvaeModel, data: &EmbeddingDataset, config: &TrainConfig) -> Result<(HvaeModel, TrainReport)> {
    config.validate()?;
    if data.dim() != model.spec().input_dim {
        return Err(Error::validation(format!(
            "dataset dimension {} does not match model input {}",
            data.dim(),
            model.spec().input_dim
        )));
    }
    let started = Instant::now();
    if config.epochs == 0 {
        return Ok((model, TrainReport::default()));
    }
    if model.norm_stats().is_none() {
        model.set_norm_stats(fit_normalizer(data)?)?;
    }
    let rows = model.norm_stats().expect("set above").normalize_dataset(data)?;
    model.set_free_bits_lambda(config.free_bits_lambda);

    let mut telemetry = match &config.telemetry_path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            Some((p.clone(), BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)))
        }
        None => None,
    };

    let n_params = model.params().len();
    let mut adam = Adam::new(n_params, config.learning_rate);
    let groups = model.spec().num_groups();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let lambda = config.free_bits_lambda;
    let start_epoch = model.schedule().epochs_completed;

    for epoch in 0..config.epochs {
        let beta = warmup_beta(epoch, config);
        order.sort_unstable();
        order.shuffle(&mut rng::rng_for(config.seed, &[SHUFFLE_STREAM, epoch as u64]));

        let mut sum_total = 0.0;
        let mut sum_recon = 0.0;
        let mut sum_kl = vec![0.0; groups];

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let base = batch_idx * config.batch_size;
            let positions: Vec<usize> = (0..batch.len()).collect();
            let chunk = (batch.len() / 16).clamp(4, 64);
            let model_ref = &model;
            let outcomes: Vec<Result<BatchOutcome>> = par::map_chunks(&positions, chunk, |ps| {
                let mut grad = vec![0.0; n_params];
                let mut terms = Vec::with_capacity(ps.len());
                for &p in ps {
                    let mut noise = SeededNoise(rng::rng_for(
                        config.seed,
                        &[NOISE_STREAM, epoch as u64, (base + p) as u64],
                    ));
                    let e = elbo_with_grad(model_ref, &rows[batch[p]], &mut noise, beta, lambda, &mut grad, weight)?;
                    if !e.total_loss.is_finite() {
                        return Err(Error::NonFinite {
                            term: "total_loss".into(),
                        });
                    }
                    terms.push(e);
                }
                Ok(BatchOutcome { grad, terms })
            });

            let mut grad = vec![0.0; n_params];
            for outcome in outcomes {
                let outcome = outcome.map_err(|e| match e {
                    Error::NonFinite { term } => Error::TrainingDiverged {
                        epoch,
                        batch: batch_idx,
                        term,
                    },
                    other => other,
                })?;
                for (g, o) in grad.iter_mut().zip(&outcome.grad) {
                    *g += o;
                }
                for e in outcome.terms {
                    sum_total += e.total_loss;
                    sum_recon += e.recon_loglik;
                    for (s, k) in sum_kl.iter_mut().zip(&e.kl_per_group) {
                        *s += k;
                    }
                }
            }
            if config.spectral_reg > 0.0 {
                spectral_penalty(&model, &mut grad, config.spectral_reg);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    term: "gradient".into(),
                });
            }
            clip_global_norm(&mut grad, config.grad_clip);
            adam.step(model.params_mut().data_mut(), &grad);
            model.clamp_obs_logvar();
        }

        let n = rows.len() as f64;
        let record = EpochRecord {
            epoch,
            beta,
            mean_total_loss: sum_total / n,
            mean_recon_loglik: sum_recon / n,
            mean_kl_per_group: sum_kl.iter().map(|s| s / n).collect(),
        };
        if !record.mean_total_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                batch: 0,
                term: "epoch mean loss".into(),
            });
        }
        if let Some((path, w)) = telemetry.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n").map_err(|e| Error::io(&*path, e))?;
        }
        log::debug!(
            "epoch {epoch}: loss {:.4} recon {:.4} beta {beta:.3}",
            record.mean_total_loss,
            record.mean_recon_loglik
        );
        report.epochs.push(record);

        let sched = model.schedule_mut();
        sched.epochs_completed = start_epoch + epoch + 1;
        sched.last_beta = beta;
        sched.optimizer_steps = adam.t;
        if (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs {
            write_checkpoint(&model, config)?;
        }
    }
    if let Some((path, mut w)) = telemetry {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    report.final_checkpoint = write_checkpoint(&model, config)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, report))
}

use serde::{Deserialize, Serialize};

use super::model::{HvaeModel, Latents};
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::rng;

/// Supplies the standard-normal draws consumed by one reparameterised pass,
/// one slice per latent group.
pub trait NoiseSource {
    fn fill_group(&mut self, group: usize, out: &mut [f64]);
}

/// Noise drawn from a seeded generator.
pub struct SeededNoise(pub rng::Rng);

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        Self(rng::rng(seed))
    }
}

impl NoiseSource for SeededNoise {
    fn fill_group(&mut self, _group: usize, out: &mut [f64]) {
        rng::fill_normal(&mut self.0, out);
    }
}

/// Pre-drawn noise, indexed by group. Reusable across calls.
#[derive(Debug, Clone)]
pub struct FixedNoise(pub Vec<Vec<f64>>);

impl NoiseSource for FixedNoise {
    fn fill_group(&mut self, group: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.0[group]);
    }
}

/// Single-sample decomposition of the negative ELBO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon_loglik: f64,
    pub kl_per_group: Vec<f64>,
    pub kl_clamped_per_group: Vec<f64>,
    pub beta: f64,
    pub total_loss: f64,
}

impl ElboBreakdown {
    fn assemble(recon_loglik: f64, kl_per_group: Vec<f64>, beta: f64, lambda: f64) -> Self {
        let kl_clamped_per_group: Vec<f64> = kl_per_group.iter().map(|&k| k.max(lambda)).collect();
        let total_loss = -recon_loglik + beta * kl_clamped_per_group.iter().sum::<f64>();
        Self {
            recon_loglik,
            kl_per_group,
            kl_clamped_per_group,
            beta,
            total_loss,
        }
    }
}

fn draw(model: &HvaeModel, noise: &mut dyn NoiseSource) -> Vec<Vec<f64>> {
    let dz = model.spec().dims_per_group;
    (0..model.spec().num_groups())
        .map(|l| {
            let mut v = vec![0.0; dz];
            noise.fill_group(l, &mut v);
            v
        })
        .collect()
}

fn check_weights(beta: f64, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::validation(format!("beta {beta} outside [0, 1]")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation(format!("free-bits floor {lambda} must be >= 0")));
    }
    Ok(())
}

fn run(
    model: &HvaeModel,
    x_norm: &[f64],
    noise: &mut dyn NoiseSource,
    beta: f64,
    lambda: f64,
    grad: Option<(&mut [f64], f64)>,
) -> Result<ElboBreakdown> {
    check_weights(beta, lambda)?;
    model.check_input(x_norm)?;
    let eps = draw(model, noise);
    let mut t = Tape::new(model.params());
    let tr = model.forward(&mut t, Latents::Posterior { x: x_norm, noise: &eps });
    let xv = t.constant(x_norm.to_vec());
    let recon = t.gauss_loglik(xv, tr.x_mean, tr.x_logvar);
    let kl_vars: Vec<_> = tr.groups.iter().map(|g| g.kl.expect("posterior mode")).collect();

    let recon_loglik = t.scalar(recon);
    if !recon_loglik.is_finite() {
        return Err(Error::NonFinite {
            term: "recon_loglik".into(),
        });
    }
    let kl: Vec<f64> = kl_vars.iter().map(|&v| t.scalar(v)).collect();
    if let Some(l) = kl.iter().position(|k| !k.is_finite()) {
        return Err(Error::NonFinite {
            term: format!("kl[{l}]"),
        });
    }
    let out = ElboBreakdown::assemble(recon_loglik, kl, beta, lambda);

    if let Some((buf, weight)) = grad {
        // A group below the floor contributes the constant lambda, so no
        // gradient flows through its KL.
        let mut seeds = vec![(recon, -weight)];
        for (&v, &k) in kl_vars.iter().zip(&out.kl_per_group) {
            if k > lambda && beta > 0.0 {
                seeds.push((v, weight * beta));
            }
        }
        t.backward(&seeds, buf);
    }
    Ok(out)
}

/// Single-sample reparameterised ELBO breakdown for one normalized input.
pub fn elbo(
    model: &HvaeModel,
    x_norm: &[f64],
    noise: &mut dyn NoiseSource,
    beta: f64,
    free_bits_lambda: f64,
) -> Result<ElboBreakdown> {
    run(model, x_norm, noise, beta, free_bits_lambda, None)
}

/// Like [`elbo`], and adds `weight * d(total_loss)/d(params)` into `grad`.
pub fn elbo_with_grad(
    model: &HvaeModel,
    x_norm: &[f64],
    noise: &mut dyn NoiseSource,
    beta: f64,
    free_bits_lambda: f64,
    grad: &mut [f64],
    weight: f64,
) -> Result<ElboBreakdown> {
    run(model, x_norm, noise, beta, free_bits_lambda, Some((grad, weight)))
}

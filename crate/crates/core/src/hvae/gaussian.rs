use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -8.0;
pub const LOGVAR_MAX: f64 = 4.0;

/// Diagonal Gaussian over one latent group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGaussian {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GroupGaussian {
    /// Log-variances are clamped into [LOGVAR_MIN, LOGVAR_MAX].
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() {
            return Err(Error::validation(format!(
                "mean has {} dims but logvar has {}",
                mean.len(),
                logvar.len()
            )));
        }
        let logvar = logvar.into_iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        Ok(Self { mean, logvar })
    }

    pub fn standard(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            logvar: vec![0.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn kl_diag(qm: &[f64], qlv: &[f64], pm: &[f64], plv: &[f64]) -> f64 {
    qm.iter()
        .zip(qlv)
        .zip(pm.iter().zip(plv))
        .map(|((&qm, &qlv), (&pm, &plv))| {
            0.5 * (plv - qlv + (qlv.exp() + (qm - pm).powi(2)) * (-plv).exp() - 1.0)
        })
        .sum()
}

/// Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions.
pub fn kl_gaussian(q: &GroupGaussian, p: &GroupGaussian) -> Result<f64> {
    if q.dims() != p.dims() {
        return Err(Error::validation(format!(
            "KL between {}-dim and {}-dim Gaussians",
            q.dims(),
            p.dims()
        )));
    }
    Ok(kl_diag(&q.mean, &q.logvar, &p.mean, &p.logvar))
}

/// mean + exp(logvar / 2) * noise
pub fn reparameterize(g: &GroupGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dims() {
        return Err(Error::validation(format!(
            "noise has {} dims, group has {}",
            noise.len(),
            g.dims()
        )));
    }
    Ok(g.mean
        .iter()
        .zip(&g.logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

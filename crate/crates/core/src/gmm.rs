//! Diagonal-covariance Gaussian mixture baseline.
//!
//! Fitting, scoring and sampling all happen on normalized embeddings; the
//! fitted model carries the normalization statistics so raw vectors can be
//! scored and samples mapped back.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::container::{self, Tensor, TensorInfo};
use crate::error::{Error, Result};
use crate::sampler::generated_id;
use crate::store::{fit_normalizer, EmbeddingDataset, EmbeddingRecord, NormalizationStats};
use crate::{par, rng};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_K: usize = 16;
pub const GMM_MAGIC: &[u8; 8] = b"EMBGGMM1";
pub const GMM_VERSION: u32 = 1;
const GMM_FORMAT: &str = "embgen-gmm/1";
const CHUNK: usize = 256;
const INIT_STREAM: u64 = 0x4b4d_5050;
const DRAW_STREAM: u64 = 0x474d_4d53;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            max_iters: 200,
            tol: 1e-6,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub norm_stats: NormalizationStats,
}

/// A fitted model plus the per-iteration mean log-likelihood.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    pub reinitialized: usize,
}

/// Per-component constants for fast scoring.
struct Scorer<'a> {
    model: &'a GmmModel,
    inv_var: Vec<Vec<f64>>,
    log_norm: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a GmmModel) -> Self {
        let inv_var = model.variances.iter().map(|v| v.iter().map(|x| 1.0 / x).collect()).collect();
        let log_norm = model
            .weights
            .iter()
            .zip(&model.variances)
            .map(|(w, v)| w.ln() - 0.5 * v.iter().map(|x| LN_2PI + x.ln()).sum::<f64>())
            .collect();
        Self {
            model,
            inv_var,
            log_norm,
        }
    }

    /// log(w_k) + log N(x | mu_k, var_k) for every component.
    fn joint(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let q: f64 = x
                .iter()
                .zip(&self.model.means[c])
                .zip(&self.inv_var[c])
                .map(|((xi, mi), iv)| (xi - mi) * (xi - mi) * iv)
                .sum();
            *o = self.log_norm[c] - 0.5 * q;
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sufficient statistics accumulated over a chunk of points.
struct Suff {
    nk: Vec<f64>,
    sx: Vec<Vec<f64>>,
    sxx: Vec<Vec<f64>>,
    loglik: f64,
    /// (mixture log-density, row) of the worst-explained point.
    worst: (f64, usize),
}

impl Suff {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            nk: vec![0.0; k],
            sx: vec![vec![0.0; d]; k],
            sxx: vec![vec![0.0; d]; k],
            loglik: 0.0,
            worst: (f64::INFINITY, 0),
        }
    }

    fn merge(&mut self, o: &Suff) {
        for c in 0..self.nk.len() {
            self.nk[c] += o.nk[c];
            for d in 0..self.sx[c].len() {
                self.sx[c][d] += o.sx[c][d];
                self.sxx[c][d] += o.sxx[c][d];
            }
        }
        self.loglik += o.loglik;
        if o.worst.0 < self.worst.0 {
            self.worst = o.worst;
        }
    }
}

fn e_step(model: &GmmModel, rows: &[Vec<f64>]) -> Suff {
    let scorer = Scorer::new(model);
    let (k, d) = (model.k, model.dim);
    let idx: Vec<usize> = (0..rows.len()).collect();
    let parts = par::map_chunks(&idx, CHUNK, |ids| {
        let mut s = Suff::zeros(k, d);
        let mut lp = vec![0.0; k];
        for &i in ids {
            let x = &rows[i];
            scorer.joint(x, &mut lp);
            let l = log_sum_exp(&lp);
            s.loglik += l;
            if l < s.worst.0 {
                s.worst = (l, i);
            }
            for (c, &lpc) in lp.iter().enumerate() {
                let r = (lpc - l).exp();
                if r == 0.0 {
                    continue;
                }
                s.nk[c] += r;
                for ((sx, sxx), &xi) in s.sx[c].iter_mut().zip(&mut s.sxx[c]).zip(x) {
                    *sx += r * xi;
                    *sxx += r * xi * xi;
                }
            }
        }
        s
    });
    let mut total = Suff::zeros(k, d);
    for p in &parts {
        total.merge(p);
    }
    total
}

fn data_variance(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    var.iter().map(|v| v.max(VARIANCE_FLOOR)).collect()
}

/// Returns the number of components that had to be reinitialized.
fn m_step(model: &mut GmmModel, s: &Suff, rows: &[Vec<f64>], global_var: &[f64]) -> usize {
    let n = rows.len() as f64;
    let mut reinit = 0;
    for c in 0..model.k {
        let nk = s.nk[c];
        if nk < 1e-10 {
            // Empty component: restart it on the worst-explained point.
            log::warn!("GMM component {c} lost all responsibility; reinitializing");
            model.means[c] = rows[s.worst.1].clone();
            model.variances[c] = global_var.to_vec();
            model.weights[c] = 1.0 / n;
            reinit += 1;
            continue;
        }
        model.weights[c] = nk / n;
        for d in 0..model.dim {
            let mu = s.sx[c][d] / nk;
            model.means[c][d] = mu;
            model.variances[c][d] = (s.sxx[c][d] / nk - mu * mu).max(VARIANCE_FLOOR);
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    reinit
}

/// k-means++ seeding followed by one hard-assignment estimate.
fn init_model(rows: &[Vec<f64>], k: usize, seed: u64, norm: &NormalizationStats, global_var: &[f64]) -> GmmModel {
    let mut r = rng::rng(seed);
    let n = rows.len();
    let mut centers = vec![rows[r.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = rows.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centers.push(rows[next].clone());
        let c = centers.last().expect("just pushed");
        for (d, x) in dist.iter_mut().zip(rows) {
            *d = d.min(sq_dist(x, c));
        }
    }

    let d = rows[0].len();
    let assign = par::map_slice(rows, |x| {
        let mut best = (f64::INFINITY, 0);
        for (c, m) in centers.iter().enumerate() {
            let dd = sq_dist(x, m);
            if dd < best.0 {
                best = (dd, c);
            }
        }
        best.1
    });
    let mut count = vec![0usize; k];
    let mut sx = vec![vec![0.0; d]; k];
    let mut sxx = vec![vec![0.0; d]; k];
    for (x, &c) in rows.iter().zip(&assign) {
        count[c] += 1;
        for j in 0..d {
            sx[c][j] += x[j];
            sxx[c][j] += x[j] * x[j];
        }
    }
    let mut model = GmmModel {
        k,
        dim: d,
        weights: vec![0.0; k],
        means: centers,
        variances: vec![global_var.to_vec(); k],
        norm_stats: norm.clone(),
    };
    for c in 0..k {
        let m = count[c].max(1) as f64;
        model.weights[c] = m / n as f64;
        if count[c] > 1 {
            for j in 0..d {
                let mu = sx[c][j] / m;
                model.means[c][j] = mu;
                model.variances[c][j] = (sxx[c][j] / m - mu * mu).max(VARIANCE_FLOOR);
            }
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    model
}

fn check_config(n: usize, config: &GmmConfig) -> Result<()> {
    if config.k == 0 {
        return Err(Error::validation("k must be >= 1"));
    }
    if n < config.k {
        return Err(Error::validation(format!("{n} points cannot support k = {}", config.k)));
    }
    if config.max_iters == 0 || config.restarts == 0 || !(config.tol >= 0.0) {
        return Err(Error::validation("max_iters and restarts must be >= 1 and tol >= 0"));
    }
    Ok(())
}

/// EM on rows that are already normalized with `norm`.
pub fn fit_gmm_rows(rows: &[Vec<f64>], norm: &NormalizationStats, config: &GmmConfig) -> Result<GmmFit> {
    check_config(rows.len(), config)?;
    let global_var = data_variance(rows);
    let mut best: Option<GmmFit> = None;
    for restart in 0..config.restarts {
        let seed = rng::derive(config.seed, &[INIT_STREAM, restart as u64]);
        let mut model = init_model(rows, config.k, seed, norm, &global_var);
        let mut trace = Vec::new();
        let mut converged = false;
        let mut reinitialized = 0;
        for _ in 0..config.max_iters {
            let s = e_step(&model, rows);
            let ll = s.loglik / rows.len() as f64;
            if !ll.is_finite() {
                return Err(Error::NonFinite {
                    term: "gmm log-likelihood".into(),
                });
            }
            let done = trace.last().is_some_and(|&prev: &f64| ll - prev < config.tol);
            trace.push(ll);
            if done {
                converged = true;
                break;
            }
            reinitialized += m_step(&mut model, &s, rows, &global_var);
        }
        let fit = GmmFit {
            model,
            log_likelihood: trace,
            converged,
            reinitialized,
        };
        let better = match &best {
            None => true,
            Some(b) => fit.log_likelihood.last() > b.log_likelihood.last(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Fit with normalization statistics taken from `data`.
pub fn fit_gmm_traced(data: &EmbeddingDataset, config: &GmmConfig) -> Result<GmmFit> {
    let norm = fit_normalizer(data)?;
    let rows = norm.normalize_dataset(data)?;
    fit_gmm_rows(&rows, &norm, config)
}

pub fn fit_gmm(data: &EmbeddingDataset, config: &GmmConfig) -> Result<GmmModel> {
    Ok(fit_gmm_traced(data, config)?.model)
}

impl GmmModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("invalid GMM: {m}")));
        if self.k == 0 || self.dim == 0 {
            return bad("k and dim must be >= 1");
        }
        if self.weights.len() != self.k || self.means.len() != self.k || self.variances.len() != self.k {
            return bad("component count mismatch");
        }
        if self.means.iter().chain(&self.variances).any(|r| r.len() != self.dim) || self.norm_stats.dim != self.dim {
            return bad("dimension mismatch");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must be non-negative and sum to 1");
        }
        if self.variances.iter().flatten().any(|v| !(*v >= VARIANCE_FLOOR * (1.0 - 1e-6)) || !v.is_finite()) {
            return bad("variances must be finite and >= the floor");
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return bad("means must be finite");
        }
        Ok(())
    }

    /// Index of the most responsible component for a normalized vector.
    pub fn most_probable(&self, x_norm: &[f64]) -> usize {
        let scorer = Scorer::new(self);
        let mut lp = vec![0.0; self.k];
        scorer.joint(x_norm, &mut lp);
        argmax(&lp)
    }

    /// Mean log-likelihood of normalized rows.
    pub fn mean_log_likelihood(&self, rows: &[Vec<f64>]) -> f64 {
        e_step(self, rows).loglik / rows.len() as f64
    }
}

/// Per-dimension squared distance from each normalized row to the mean of
/// its most probable component, averaged over rows.
pub fn gmm_mse_rows(rows: &[Vec<f64>], model: &GmmModel) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::validation("no rows to score"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != model.dim) {
        return Err(Error::validation(format!(
            "row has dimension {}, model expects {}",
            r.len(),
            model.dim
        )));
    }
    let scorer = Scorer::new(model);
    let errs = par::map_chunks(rows, CHUNK, |chunk| {
        let mut lp = vec![0.0; model.k];
        chunk
            .iter()
            .map(|x| {
                scorer.joint(x, &mut lp);
                sq_dist(x, &model.means[argmax(&lp)])
            })
            .sum::<f64>()
    });
    Ok(errs.iter().sum::<f64>() / rows.len() as f64 / model.dim as f64)
}

pub fn gmm_mse(data: &EmbeddingDataset, model: &GmmModel) -> Result<f64> {
    let rows = model.norm_stats.normalize_dataset(data)?;
    gmm_mse_rows(&rows, model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScanEntry {
    pub k: usize,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScanReport {
    pub entries: Vec<KScanEntry>,
    pub selected_k: Option<usize>,
}

pub fn default_scan_range() -> Vec<usize> {
    (3..=150).collect()
}

/// Smallest k whose relative MSE improvement over the previous successful
/// k drops below 5%; the last successful k if none does.
pub fn select_k(entries: &[KScanEntry]) -> Option<usize> {
    let ok: Vec<(usize, f64)> = entries.iter().filter_map(|e| e.mse.map(|m| (e.k, m))).collect();
    for w in ok.windows(2) {
        let (prev, cur) = (w[0].1, w[1].1);
        let rel = if prev > 0.0 { (prev - cur) / prev } else { 0.0 };
        if rel < 0.05 {
            return Some(w[1].0);
        }
    }
    ok.last().map(|e| e.0)
}

/// Fit every k (concurrently) and record its MSE. Failed fits are kept in
/// the report with their error.
pub fn scan_k(data: &EmbeddingDataset, ks: &[usize], base: &GmmConfig) -> Result<KScanReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::validation("ks must be non-empty and every k >= 1"));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("ks must be strictly increasing"));
    }
    let norm = fit_normalizer(data)?;
    let rows = norm.normalize_dataset(data)?;
    let entries = par::map_slice(ks, |&k| {
        let config = GmmConfig { k, ..base.clone() };
        match fit_gmm_rows(&rows, &norm, &config).and_then(|f| gmm_mse_rows(&rows, &f.model)) {
            Ok(mse) => KScanEntry {
                k,
                mse: Some(mse),
                error: None,
            },
            Err(e) => {
                log::warn!("k = {k} failed: {e}");
                KScanEntry {
                    k,
                    mse: None,
                    error: Some(e.to_string()),
                }
            }
        }
    });
    let selected_k = select_k(&entries);
    Ok(KScanReport { entries, selected_k })
}

/// Ancestral draws in normalized space, with the chosen component.
pub fn sample_gmm_normalized(model: &GmmModel, count: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
    model.validate()?;
    let pick = WeightedIndex::new(&model.weights).map_err(|e| Error::validation(format!("GMM weights: {e}")))?;
    Ok(par::map_range(count, |i| {
        let mut r = rng::rng_for(seed, &[DRAW_STREAM, i as u64]);
        let c = pick.sample(&mut r);
        let eps = rng::normal_vec(&mut r, model.dim);
        let x = model.means[c]
            .iter()
            .zip(&model.variances[c])
            .zip(&eps)
            .map(|((m, v), e)| m + v.sqrt() * e)
            .collect();
        (c, x)
    }))
}

pub fn sample_gmm(model: &GmmModel, count: usize, seed: u64) -> Result<EmbeddingDataset> {
    if count == 0 {
        return Err(Error::validation("sample count must be >= 1"));
    }
    let draws = sample_gmm_normalized(model, count, seed)?;
    let records = draws
        .iter()
        .enumerate()
        .map(|(i, (_, y))| {
            let v = model.norm_stats.denormalize(y)?;
            let id = generated_id(seed, i);
            Ok(EmbeddingRecord::new(id.clone(), id, v.iter().map(|&x| x as f32).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingDataset::new(records, format!("gmm:k={}", model.k))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    norm_stats: NormalizationStats,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Serialize `model`; `extra` is stored verbatim in the header.
pub fn encode_gmm(model: &GmmModel, extra: serde_json::Value) -> Result<Vec<u8>> {
    model.validate()?;
    let header = serde_json::to_value(Header {
        format: GMM_FORMAT.into(),
        k: model.k,
        dim: model.dim,
        weights: model.weights.clone(),
        norm_stats: model.norm_stats.clone(),
        extra,
    })?;
    let block = |name: &str, rows: &[Vec<f64>]| Tensor {
        info: TensorInfo {
            name: name.into(),
            shape: vec![model.k, model.dim],
        },
        data: rows.concat(),
    };
    container::encode(
        GMM_MAGIC,
        GMM_VERSION,
        &header,
        &[block("means", &model.means), block("variances", &model.variances)],
    )
}

pub fn save_gmm(model: &GmmModel, path: &Path, extra: serde_json::Value) -> Result<()> {
    container::write(path, &encode_gmm(model, extra)?)
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    let c = container::read(path, GMM_MAGIC)?;
    if c.version != GMM_VERSION {
        return Err(Error::validation(format!("unsupported GMM version {}", c.version)));
    }
    let h: Header = serde_json::from_value(c.header.clone())?;
    if h.format != GMM_FORMAT {
        return Err(Error::validation(format!("unexpected format tag {:?}", h.format)));
    }
    let rows = |name: &str| -> Result<Vec<Vec<f64>>> {
        let t = c.tensor(name)?;
        if t.info.shape != [h.k, h.dim] {
            return Err(Error::validation(format!("tensor {name} has shape {:?}", t.info.shape)));
        }
        Ok(t.data.chunks(h.dim).map(|r| r.to_vec()).collect())
    };
    let model = GmmModel {
        k: h.k,
        dim: h.dim,
        weights: h.weights,
        means: rows("means")?,
        variances: rows("variances")?.into_iter().map(|r| r.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect()).collect(),
        norm_stats: h.norm_stats,
    };
    model.validate()?;
    Ok(model)
}

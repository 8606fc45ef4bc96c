use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use embgen::eval::{self, EvalSets, StubBackend};
use embgen::gmm::{self, GmmConfig};
use embgen::hvae::{self, build_model};
use embgen::sampler::{self, SampleRequest};
use embgen::store::{load_dataset, save_dataset, EmbeddingDataset};
use embgen::{synth, trainer};
use serde_json::{json, Value};

use crate::config::{require, require_input, sidecar, RunConfig};

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path, config: &RunConfig) -> Result<EmbeddingDataset> {
    require_input(path, Some(config.format))?;
    Ok(load_dataset(path, config.format)?)
}

pub fn synth_data(config: &RunConfig) -> Result<()> {
    let out = require(&config.synth.out, "--out")?;
    let (data, truth) = synth::generate(&config.synth.params)?;
    let files = save_dataset(&data, out, config.format)?;
    let truth_path = sidecar(out, "truth.json");
    write_json(&truth_path, &json!({ "config": config.to_json(), "truth": truth }))?;
    log::info!(
        "wrote {} embeddings ({} speakers, dim {}) to {}",
        data.len(),
        data.speaker_index().len(),
        data.dim(),
        files[0].display()
    );
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    let data_path = require(&config.train.data, "training data (--data)")?;
    let out = require(&config.train.params.checkpoint_path, "checkpoint path (--out)")?;
    let data = load(data_path, config)?;
    let model = match &config.train.resume {
        Some(p) => {
            require_input(p, None)?;
            hvae::load_checkpoint(p)?
        }
        None => build_model(&config.model.spec(data.dim()), config.seed)?,
    };
    let mut params = config.train.params.clone();
    if params.telemetry_path.is_none() {
        params.telemetry_path = Some(sidecar(out, "telemetry.jsonl"));
    }
    params.checkpoint_extra = config.to_json();
    log::info!(
        "training on {} embeddings: {} groups, {} epochs, batch {}",
        data.len(),
        model.spec().num_groups(),
        params.epochs,
        params.batch_size
    );
    let (_, report) = trainer::train(model, &data, &params)?;
    if let Some(last) = report.epochs.last() {
        log::info!(
            "done in {:.1}s: loss {:.4}, recon log-lik {:.4}",
            report.wall_clock_secs,
            last.mean_total_loss,
            last.mean_recon_loglik
        );
    }
    if report.final_checkpoint.is_none() {
        // Zero epochs: still leave a checkpoint of the untouched model.
        let mut model = match &config.train.resume {
            Some(p) => hvae::load_checkpoint(p)?,
            None => build_model(&config.model.spec(data.dim()), config.seed)?,
        };
        if model.norm_stats().is_none() {
            model.set_norm_stats(embgen::store::fit_normalizer(&data)?)?;
        }
        hvae::save_checkpoint(&model, out, json!({ "run": config.to_json() }))?;
    }
    Ok(())
}

fn magic(path: &Path) -> Result<[u8; 8]> {
    let mut buf = [0u8; 8];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(buf)
}

pub fn sample(config: &RunConfig) -> Result<()> {
    let s = &config.sample;
    let model_path = require(&s.model, "model file (--model)")?;
    let out = require(&s.out, "--out")?;
    require_input(model_path, None)?;
    let (data, generator) = match &magic(model_path)? {
        m if m == hvae::CHECKPOINT_MAGIC => {
            let model = hvae::load_checkpoint(model_path)?;
            let req = SampleRequest {
                count: s.count,
                temperature: s.temperature,
                seed: config.seed,
            };
            (sampler::sample_embeddings(&model, &req)?, "hvae")
        }
        m if m == gmm::GMM_MAGIC => {
            let model = gmm::load_gmm(model_path)?;
            (gmm::sample_gmm(&model, s.count, config.seed)?, "gmm")
        }
        _ => bail!("{} is neither a VAE checkpoint nor a GMM file", model_path.display()),
    };
    save_dataset(&data, out, config.format)?;
    write_json(
        &sidecar(out, "meta.json"),
        &json!({
            "source_tag": data.source_tag(),
            "generator": generator,
            "count": data.len(),
            "temperature": s.temperature,
            "seed": config.seed,
            "config": config.to_json(),
        }),
    )?;
    log::info!("wrote {} {generator} samples to {}", data.len(), out.display());
    Ok(())
}

pub fn gmm(config: &RunConfig) -> Result<()> {
    let g = &config.gmm;
    let data_path = require(&g.data, "data (--data)")?;
    let out = require(&g.out, "model path (--out)")?;
    let data = load(data_path, config)?;
    let mut k = g.params.k;
    let scan = if g.scan {
        if g.scan_min == 0 || g.scan_min > g.scan_max {
            bail!("invalid scan range {}..={}", g.scan_min, g.scan_max);
        }
        let ks: Vec<usize> = (g.scan_min..=g.scan_max.min(data.len())).collect();
        let report = gmm::scan_k(&data, &ks, &g.params)?;
        k = report.selected_k.ok_or_else(|| anyhow!("every k in the scan failed"))?;
        log::info!("scan selected k = {k}");
        Some(report)
    } else {
        None
    };
    let fit = gmm::fit_gmm_traced(&data, &GmmConfig { k, ..g.params.clone() })?;
    let mse = gmm::gmm_mse(&data, &fit.model)?;
    gmm::save_gmm(&fit.model, out, json!({ "run": config.to_json() }))?;
    let report_path = g.report.clone().unwrap_or_else(|| sidecar(out, "report.json"));
    write_json(
        &report_path,
        &json!({
            "config": config.to_json(),
            "k": k,
            "mse": mse,
            "converged": fit.converged,
            "log_likelihood": fit.log_likelihood,
            "scan": scan,
        }),
    )?;
    log::info!("fitted k = {k}, per-dimension MSE {mse:.5}");
    Ok(())
}

pub fn eval(config: &RunConfig) -> Result<()> {
    let e = &config.eval;
    let data_path = require(&e.data, "natural embeddings (--data)")?;
    let out = require(&e.out, "report path (--out)")?;
    let data = load(data_path, config)?;
    let generated = match &e.generated {
        Some(p) => Some(load(p, config)?),
        None => None,
    };
    let model = match &e.checkpoint {
        Some(p) => {
            require_input(p, None)?;
            Some(hvae::load_checkpoint(p)?)
        }
        None => None,
    };

    let mut sets: EvalSets = eval::build_eval_sets(&data, &e.params)?;
    let backend = StubBackend {
        noise_scale: e.noise_scale,
        seed: config.seed,
    };
    sets.synthesize_same_speaker(&backend)?;
    if let Some(model) = &model {
        let targets = sets
            .gt
            .records()
            .iter()
            .map(|r| sampler::reconstruct(model, &r.to_f64()))
            .collect::<embgen::Result<Vec<_>>>()?;
        sets.synthesize_reconstruction(&backend, &targets)?;
    }
    if let Some(g) = &generated {
        sets.synthesize_generated(&backend, g, e.params.generated_speakers)?;
    }
    let report = eval::assemble_report(&sets, Some(&data), &e.params)?;
    let text = match &e.transcripts {
        Some(p) => {
            require_input(p, None)?;
            Some(eval::score_transcripts(&eval::load_transcripts(p)?)?)
        }
        None => None,
    };
    write_json(
        out,
        &json!({
            "config": config.to_json(),
            "rows": report.rows,
            "omitted": report.omitted,
            "text": text,
        }),
    )?;
    let table = report.render_table();
    fs::write(out.with_extension("txt"), &table).with_context(|| format!("writing table next to {}", out.display()))?;
    print!("{table}");
    Ok(())
}

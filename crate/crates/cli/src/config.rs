//! Run configuration: TOML file sections, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embgen::eval::EvalConfig;
use embgen::gmm::GmmConfig;
use embgen::hvae::{Backbone, LatentHierarchySpec};
use embgen::store::DatasetFormat;
use embgen::synth::SynthConfig;
use embgen::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed shared by every command.
    pub seed: u64,
    pub format: DatasetFormat,
    pub threads: Option<usize>,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub gmm: GmmSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    #[serde(flatten)]
    pub params: SynthConfig,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub levels: usize,
    pub groups_per_level: usize,
    pub dims_per_group: usize,
    pub hidden_size: usize,
    pub backbone: Backbone,
    pub conv_channels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            levels: 2,
            groups_per_level: 5,
            dims_per_group: 20,
            hidden_size: 64,
            backbone: Backbone::Auto,
            conv_channels: 8,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, input_dim: usize) -> LatentHierarchySpec {
        let mut s = LatentHierarchySpec::new(
            self.levels,
            self.groups_per_level,
            self.dims_per_group,
            self.hidden_size,
            input_dim,
        )
        .with_backbone(self.backbone);
        s.conv_channels = self.conv_channels;
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub params: TrainConfig,
    pub data: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSection {
    pub model: Option<PathBuf>,
    pub count: usize,
    pub temperature: f64,
    pub out: Option<PathBuf>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            model: None,
            count: 1000,
            temperature: 1.0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSection {
    #[serde(flatten)]
    pub params: GmmConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub scan: bool,
    pub scan_min: usize,
    pub scan_max: usize,
    pub report: Option<PathBuf>,
}

impl Default for GmmSection {
    fn default() -> Self {
        Self {
            params: GmmConfig::default(),
            data: None,
            out: None,
            scan: false,
            scan_min: 3,
            scan_max: 150,
            report: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    #[serde(flatten)]
    pub params: EvalConfig,
    /// Natural embeddings the ground-truth sets are drawn from.
    pub data: Option<PathBuf>,
    /// Generated embeddings used as target speakers.
    pub generated: Option<PathBuf>,
    /// Model used for the reconstruction set.
    pub checkpoint: Option<PathBuf>,
    pub noise_scale: f64,
    pub transcripts: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Push the global seed into every section.
    pub fn propagate_seed(&mut self) {
        self.synth.params.seed = self.seed;
        self.train.params.seed = self.seed;
        self.gmm.params.seed = self.seed;
        self.eval.params.seed = self.seed;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

pub fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    match value {
        Some(p) => Ok(p),
        None => bail!("missing {what}: pass it as a flag or set it in the config file"),
    }
}

/// Fail early, naming the path, when an input file is absent.
pub fn require_input(path: &Path, format: Option<DatasetFormat>) -> Result<()> {
    let probe = match format {
        Some(DatasetFormat::ManifestBinary) => embgen::store::DatasetPaths::resolve(path).manifest,
        _ => path.to_path_buf(),
    };
    if !probe.exists() {
        bail!("input not found: {}", probe.display());
    }
    Ok(())
}

/// `<stem>.meta.json` next to a dataset written at `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let s = path.to_string_lossy();
    let stem = [".manifest.jsonl", ".embt", ".jsonl"]
        .iter()
        .find_map(|ext| s.strip_suffix(ext))
        .unwrap_or(&s);
    PathBuf::from(format!("{stem}.{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn sections_parse() {
        let c: RunConfig = toml::from_str(
            "seed = 3\nformat = \"jsonl\"\n[model]\nhidden_size = 32\n[train]\nepochs = 5\n[gmm]\nk = 4\nscan = true\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.format, DatasetFormat::Jsonl);
        assert_eq!(c.model.hidden_size, 32);
        assert_eq!(c.model.levels, 2);
        assert_eq!(c.train.params.epochs, 5);
        assert_eq!(c.train.params.batch_size, 1024);
        assert_eq!(c.gmm.params.k, 4);
        assert!(c.gmm.scan);
    }

    #[test]
    fn sidecar_paths() {
        assert_eq!(sidecar(Path::new("a/b.manifest.jsonl"), "meta.json"), PathBuf::from("a/b.meta.json"));
        assert_eq!(sidecar(Path::new("a/b"), "meta.json"), PathBuf::from("a/b.meta.json"));
        assert_eq!(sidecar(Path::new("b.jsonl"), "truth.json"), PathBuf::from("b.truth.json"));
    }
}

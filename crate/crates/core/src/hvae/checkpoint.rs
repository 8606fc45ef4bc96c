//! Model checkpoints: a [`crate::container`] file with magic `EMBGHVAE`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{HvaeModel, ScheduleState};
use super::params::ParamStore;
use super::spec::LatentHierarchySpec;
use crate::container;
use crate::error::{Error, Result};
use crate::store::NormalizationStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMBGHVAE";
pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "embgen-hvae/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    spec: LatentHierarchySpec,
    free_bits_lambda: f64,
    schedule: ScheduleState,
    norm_stats: Option<NormalizationStats>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Serialize a model. `extra` is stored verbatim in the header (run
/// configuration, for instance).
pub fn encode_checkpoint(model: &HvaeModel, extra: serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        format: FORMAT_TAG.into(),
        spec: model.spec().clone(),
        free_bits_lambda: model.free_bits_lambda(),
        schedule: model.schedule().clone(),
        norm_stats: model.norm_stats().cloned(),
        extra,
    };
    container::encode(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        &serde_json::to_value(header)?,
        &model.params().to_tensors(),
    )
}

pub fn save_checkpoint(model: &HvaeModel, path: &Path, extra: serde_json::Value) -> Result<()> {
    container::write(path, &encode_checkpoint(model, extra)?)
}

pub fn load_checkpoint(path: &Path) -> Result<HvaeModel> {
    let c = container::read(path, CHECKPOINT_MAGIC)?;
    if c.version != CHECKPOINT_VERSION {
        return Err(Error::validation(format!(
            "{}: checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            path.display(),
            c.version
        )));
    }
    let header: Header = serde_json::from_value(c.header.clone())?;
    if header.format != FORMAT_TAG {
        return Err(Error::validation(format!(
            "{}: unexpected format tag {:?}",
            path.display(),
            header.format
        )));
    }
    let mut params = ParamStore::new();
    for t in &c.tensors {
        let mut it = t.data.iter().copied();
        params.add(t.info.name.clone(), &t.info.shape, || it.next().unwrap_or(0.0));
    }
    HvaeModel::from_parts(
        header.spec,
        params,
        header.norm_stats,
        header.free_bits_lambda,
        header.schedule,
    )
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which residual cell family the encoder and decoder output path use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// 1D convolutions when the input is long enough to halve once per
    /// level with a useful length left over, affine cells otherwise.
    #[default]
    Auto,
    Affine,
    Conv1d,
}

/// Minimum sequence length at the coarsest level for `Backbone::Auto` to
/// pick convolutions.
const MIN_COARSE_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentHierarchySpec {
    pub levels: usize,
    pub groups_per_level: usize,
    pub dims_per_group: usize,
    pub hidden_size: usize,
    pub input_dim: usize,
    #[serde(default)]
    pub backbone: Backbone,
    #[serde(default = "default_channels")]
    pub conv_channels: usize,
}

fn default_channels() -> usize {
    8
}

impl LatentHierarchySpec {
    pub fn new(levels: usize, groups_per_level: usize, dims_per_group: usize, hidden_size: usize, input_dim: usize) -> Self {
        Self {
            levels,
            groups_per_level,
            dims_per_group,
            hidden_size,
            input_dim,
            backbone: Backbone::Auto,
            conv_channels: default_channels(),
        }
    }

    pub fn with_backbone(mut self, backbone: Backbone) -> Self {
        self.backbone = backbone;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("levels", self.levels),
            ("groups_per_level", self.groups_per_level),
            ("dims_per_group", self.dims_per_group),
            ("hidden_size", self.hidden_size),
            ("input_dim", self.input_dim),
            ("conv_channels", self.conv_channels),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("latent hierarchy field {name} must be >= 1")));
        }
        if self.backbone == Backbone::Conv1d && self.level_len(0) < 2 {
            return Err(Error::validation(format!(
                "input_dim {} is too short for {} stride-2 levels; use the affine backbone",
                self.input_dim, self.levels
            )));
        }
        Ok(())
    }

    /// Total number of latent groups L.
    pub fn num_groups(&self) -> usize {
        self.levels * self.groups_per_level
    }

    pub fn total_latent_dims(&self) -> usize {
        self.num_groups() * self.dims_per_group
    }

    /// Level of group `l`; level 0 is the coarsest.
    pub fn level_of(&self, group: usize) -> usize {
        group / self.groups_per_level
    }

    /// Concrete backbone after resolving `Auto`.
    pub fn resolved_backbone(&self) -> Backbone {
        match self.backbone {
            Backbone::Auto if self.level_len(0) >= MIN_COARSE_LEN => Backbone::Conv1d,
            Backbone::Auto => Backbone::Affine,
            b => b,
        }
    }

    /// Sequence length of the encoder feature map at `level` (0 = coarsest).
    /// The finest level sits one stride-2 step below the input.
    pub fn level_len(&self, level: usize) -> usize {
        let steps = self.levels - level;
        (0..steps).fold(self.input_dim, |t, _| t.div_ceil(2))
    }
}

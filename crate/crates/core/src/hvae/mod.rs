//! Deep hierarchical VAE over 1D embedding vectors.

mod checkpoint;
mod elbo;
mod gaussian;
mod model;
mod params;
mod spec;
pub(crate) mod tape;

pub use checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use elbo::{elbo, elbo_with_grad, ElboBreakdown, FixedNoise, NoiseSource, SeededNoise};
pub use gaussian::{kl_gaussian, reparameterize, GroupGaussian, LOGVAR_MAX, LOGVAR_MIN};
pub use model::{build_model, HvaeModel, ScheduleState, DEFAULT_FREE_BITS};
pub(crate) use model::Latents;
pub use params::{Block, BlockId, ParamStore};
pub use spec::{Backbone, LatentHierarchySpec};

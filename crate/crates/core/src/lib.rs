//! Generative modelling of speaker-embedding tables.
//!
//! * [`store`]: embedding datasets, file formats and quantile normalization
//! * [`hvae`]: the hierarchical VAE, its ELBO and checkpoints
//! * [`trainer`]: mini-batch training with KL warmup and free bits
//! * [`sampler`]: temperature-controlled ancestral sampling and reconstruction
//! * [`gmm`]: diagonal-covariance mixture baseline
//! * [`eval`]: cosine-similarity suite, WER/CER and report assembly
//! * [`synth`]: planted synthetic speaker data

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod hvae;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

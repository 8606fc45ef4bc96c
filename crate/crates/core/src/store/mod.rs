//! Embedding tables: in-memory dataset, on-disk formats, and per-feature
//! quantile normalization.

mod dataset;
mod io;
mod normalize;

pub use dataset::{EmbeddingDataset, EmbeddingRecord};
pub use io::{load_dataset, save_dataset, DatasetFormat, DatasetPaths, MATRIX_MAGIC};
pub use normalize::{fit_normalizer, quantile_sorted, NormalizationStats, QUANTILE_HIGH, QUANTILE_LOW};

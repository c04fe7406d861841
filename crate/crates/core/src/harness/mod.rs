//! Data generation and ingestion, windowing, run configuration and the CLI.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod export;
pub mod gradcheck;
pub mod manifest;
pub mod synthetic;
pub mod windows;

pub use config::RunConfig;
pub use dataset::{load_csv, Dataset, DatasetSchema, EntitySeries, Frequency, Vocabulary};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
pub use windows::{leakage_violations, split_and_window, window_count, Boundaries, Split, Splits};

//! Dataset ingestion, batch extraction, experiments and the command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod extract;
pub mod report;
pub mod shapes;
pub mod synthetic;

pub use cli::cli_main;
pub use config::{ExtractionConfig, PipelineConfig, DATA_DIR_ENV};
pub use dataset::{scan_modelnet, DatasetManifest, ManifestEntry, Split};
pub use extract::{embed_cloud, embed_raw, extract_features, write_extraction, Embedding, Extraction, Extractor};
pub use experiments::{reconstruct2d, run_axis_stability, run_invariance_suite};
pub use report::ExperimentReport;

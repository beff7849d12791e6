//! Data collection and experiment orchestration.

pub mod collect;
pub mod config;
pub mod fingerprint;
pub mod run;

pub use collect::collect_transitions;
pub use config::{apply_override, AnalysisConfig, DataConfig, ExperimentConfig, PolicyConfig, SCHEMA_VERSION};
pub use fingerprint::{fingerprint, stage_fingerprint};
pub use run::{run_pipeline, run_pipeline_in, stage_fingerprints, train_seeds, RunManifest, StageRecord, StageStatus, CONFIG_FILE, MANIFEST_FILE, STAGES};

//! Experiment orchestration: configuration files, Monte Carlo sweeps, scene
//! runs, output emission, and run manifests.

pub mod config;
pub mod experiment;
pub mod files;
pub mod output;

pub use config::{
    ArraySpec, CovariancePipeline, ExperimentConfig, ExperimentKind, GeometryConfig, GridConfig,
    ReconstructionMethod, SceneConfig, SolverConfig, SweepConfig, SPEED_OF_LIGHT,
};
pub use experiment::{resolve_arrays, run_experiment, ResolvedArray, RunOutput};
pub use files::{
    load_scene, read_snapshot_container, read_xyz, save_scene, write_snapshot_container,
};
pub use output::{
    emit_outputs, fmt_sig9, sha256_hex, ExperimentRecords, OutputChecksum, PowerCloud,
    ProfileRecords, RunManifest, SceneRecords, SweepRecords,
};

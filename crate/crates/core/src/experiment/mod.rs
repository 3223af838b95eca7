//! Seeded end-to-end experiments and their reports.

pub mod checks;
mod config;
mod report;
pub mod stats;
mod sweeps;
mod world;

pub use config::{
    derive_seed, AttackerConfig, DataConfig, DetectionConfig, EffectiveSizes, ExperimentConfig, SweepConfig,
};
pub use report::{
    emit_report, read_report_csv, read_report_json, ExperimentReport, PointParams, ReportFormat, ReportMetadata,
    ReportRow, Timing,
};
pub use sweeps::{
    location_sets, run_alpha_sweep, run_attack_method_sweep, run_group_size_sweep, run_location_sweep,
    run_malicious_count_sweep, run_method_comparison, run_named, run_occurrence_sweep, run_pipeline, run_sweep, SWEEPS,
};
pub use world::{Stream, StreamEval, World};

//! Configured end-to-end runs: simulate → detect → analyze → report, with a
//! manifest recording every output's digest.

mod config;
mod gated;
mod physics;
mod run;

pub use config::{AlignOn, AnalysisOptions, GateConfig, RunConfig, SourceConfig, TlsConfig, SCHEMA_VERSION};
pub use gated::{
    analyze_recovery, channel_events, channel_synth, detect_segment, gate_ranges, gated_qubit_records,
    merge_detections, qubit_synth, recovery_experiment, truth_events, RecoveryAnalysis, MKID_BIN_NS,
};
pub use physics::{physics_table, GapRow, LifetimeRow, PhysicsQuery, PhysicsTable, DISCREPANCY_TOLERANCE};
pub use run::{
    run_pipeline, run_stage, AnalysisSummary, ChannelSummary, DetectSummary, OutputFile, RunManifest, Stage,
    StageRecord, StageStatus, CONFIG_FILE, MANIFEST_FILE,
};

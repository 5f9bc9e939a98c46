//! Metrics, report emission and experiment orchestration.

mod emit;
mod experiment;
mod metrics;

pub use emit::{emit_report, points_csv, report_markdown, RunRecord, POINTS_HEADER};
pub use experiment::{
    load_data, run_experiment, CompressionSummary, DataConfig, ExperimentConfig, Manifest, RunData, RunOutcome,
    Seeds, Stage, StageRecord, StageStatus, COMPRESSED_FILE, MANIFEST_FILE, METRICS_FILE, STUDENT_FILE,
    TEACHER_FILE,
};
pub use metrics::{accuracy, delta_a, flop_ratio, param_ratio, ratio, MetricsReport};

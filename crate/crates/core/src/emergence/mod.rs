//! Temporal analysis over checkpoint timelines: change-points with
//! bootstrap intervals, detectability, indispensability and consolidation
//! markers, and the end-to-end per-checkpoint pipeline.

mod changepoint;
mod compass;
mod markers;
mod timeline;

pub use changepoint::{
    bootstrap_ci, bootstrap_splits, changepoint, fit_piecewise, ChangePoint, Interval,
    DEFAULT_BOOTSTRAP, DEFAULT_MIN_SEGMENT,
};
pub use compass::{
    analyze_step, build_timeline, emergence_report, graph_file_name, run_compass, CompassRun,
    EmergenceConfig, EmergenceReport, StepResult, TimelineConfig, CHANGEPOINT_TOPK,
    REPORT_FILE_VERSION, REPORT_JSON, TIMELINE_CSV, TIMELINE_JSON,
};
pub use markers::{
    consolidation_from_stability, detect_consolidation, detect_detectability,
    detect_indispensability, DropThreshold, IndispensabilityMode, Marker, DEFAULT_CONSOLIDATION_K,
    DEFAULT_CONSOLIDATION_PERSISTENCE, DEFAULT_CONSOLIDATION_THRESHOLD, DETECT_PERSISTENCE,
};
pub use timeline::{StabilityBasis, Timeline, TIMELINE_FILE_VERSION};

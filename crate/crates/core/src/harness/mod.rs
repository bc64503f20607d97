//! Experiment orchestration: config, trials, aggregation and report output.

mod config;
mod report;
mod run;

pub use config::{
    AnalysisSection, AttackSection, DataSource, ExperimentConfig, LabelOnlySection, MemorizationSection, ModelSection,
    PacingSection, Precision, ShapleySection, TargetKind, TrainSection,
};
pub use report::{
    emit_report, summary_table, AttackDetails, AttackReport, AuditReport, MemGuardReport, ReportFormat, RunOutput,
    ShapleyReport, TargetReport, TrialDetails, TrialOutcome, TrialReport, TrialStatus,
};
pub use run::{run_experiment, Phases, RunOptions};

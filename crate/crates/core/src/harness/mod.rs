//! Scenario configuration, closed-loop runs, metrics and file output.

pub mod config;
pub mod export;
pub mod metrics;
pub mod run;
pub mod sweep;

pub use config::{ControllerVariant, GravityMultipleForce, ScenarioConfig};
pub use export::{export, parse_csv_log, write_csv_log, ExportFormat, RunSummary};
pub use metrics::{
    constraint_audit, cumulative_regret, dynamic_regret, tracking_metrics, ConstraintAudit, TrackingMetrics,
};
pub use run::{run_scenario, RunLog, RunStatus, StepRecord};
pub use sweep::{run_sweep, SweepCase, SweepReport, SweepRun, SweepSpec};

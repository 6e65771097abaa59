//! Experiment orchestration: declarative sweep plans, the execution engine
//! that turns them into results tables, and the recorded-series pipeline.

pub mod plan;
pub mod realdata;
pub mod run;

pub use plan::{preset, ExperimentPlan, MetricKind, Sweep, PRESET_NAMES};
pub use realdata::{realdata_pipeline, RealDataConfig, RealDataOutcome};
pub use run::{kernel_size_study, run_plan, ResultRow, RunManifest};

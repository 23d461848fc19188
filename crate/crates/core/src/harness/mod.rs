//! Experiment grid runner, reports and checkpoint I/O.

mod cell;
mod config;
mod output;
mod report;
mod run;


pub use cell::{evaluate, fit, load_split, project, FitSummary};
pub use config::{
    builtin_scenario, Algorithm, AttributionConfig, DataConfig, ExperimentConfig, GraphSettings, LoadedData,
    LogisticConfig,
};
pub use output::{emit_report, explain_record, render_tables, AnyModel};
pub use report::{
    CellReport, CellSummary, DirectedRow, ExperimentReport, FeatureRow, MeanSd, MetricSummary, Oracle, PairRow,
    Provenance, TOP_ROWS,
};
pub use run::run_experiment;

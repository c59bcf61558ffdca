//! Experiment configuration, seeded runs with CSV output, and bound
//! certification over saved traces.

mod certify;
mod config;
mod run;

pub use certify::{certify_bounds, find_traces, write_certification, CertificationReport};
pub use config::{
    EnvironmentSpec, ExperimentConfig, Scheme, ScheduleConfig, Sweep, Variant, PRESETS,
};
pub use run::{
    aggregate_logs, aggregate_traces, build_mdp, checkpoint_path, deep_run, final_third_stats,
    gen_maze, run_deep, run_tabular, summarize_logs, tabular_trace, DeepAggregateRow, DeepSummary,
    TabularAggregateRow, TabularSummary,
};

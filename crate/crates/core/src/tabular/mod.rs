//! The tabular iteration schemes, coefficient schedules, error injection and
//! run traces.

mod errors;
mod schedule;
mod schemes;
mod trace;

pub use errors::{inject_error, ApplicationMode, CustomError, ErrorKind, ErrorModel, ErrorTrace};
pub use schedule::{update_lambda_tabular, CoefficientSchedule, ScheduleRule};
pub use schemes::{
    averaged_iteration_run, geometric_interpolation, gvi_explicit_run, gvi_stable_run,
    gvi_stable_step, gvi_stable_step_with_clip, mdvi_run, mdvi_step, munchausen_step,
    munchausen_step_with_clip, run_scheme, RunOptions, TabularScheme, DEFAULT_LOG_CLIP, Q_STAR_TOL,
};
pub use trace::{load_records, read_records, write_records, IterationRecord, IterationTrace};

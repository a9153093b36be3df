//! Corpus cases, grain-size sweeps and the access-reordering experiment.

mod cases;
pub mod corpus;
mod reorder_exp;
mod sweep;

pub use cases::{
    run_on_reference, run_on_runtime, values_match, BenchCase, CaseKind, CaseRun, OracleMismatch, MAX_THREADS,
};
pub use reorder_exp::{case_trace, run_reorder_experiment, ReorderReport, ReorderSetup, VariantReport};
pub use sweep::{run_sweep, SweepOptions, SweepReport, SweepRow};

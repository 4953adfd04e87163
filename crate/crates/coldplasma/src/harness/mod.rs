//! Experiment harness: configuration, the manufactured solution, file
//! output (CSV diagnostics, VTK snapshots, coefficient dumps) and the
//! drivers behind the bundled examples and the command-line binary.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod mms;
pub mod output;
pub mod vtk;

pub use config::{Integrator, RunConfig};
pub use experiments::{
    apply_cleaning, build_discretization, clean_field_dir, conservation_initial_state,
    conservation_preset, convergence_preset, info_string, run_conservation, run_convergence,
    run_wake, wake_preset, ConservationSeries, ConvergenceTable, WakeSummary,
};
pub use mms::MmsSolution;

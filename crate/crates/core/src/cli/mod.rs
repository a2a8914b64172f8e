//! Command-line front end: `fit`, `eval`, `plotdata`, `label` and `simulate`.
//!
//! Every command reads one [`RunConfig`] and writes into its output
//! directory. Outputs are byte-identical across reruns with the same inputs.

mod commands;
pub mod config;
pub mod render;

pub use commands::{
    cmd_eval, cmd_fit, cmd_label, cmd_plotdata, cmd_simulate, load_records, plane_grid, EvalOutput, GridPoint, LabelSummary,
    LinePoint, PlaneDoc, PlotDocument, ProjectionDoc, RankingRow, ScatterPoint, PLOT_SCHEMA_VERSION,
};
pub use config::{Overrides, RunConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or unreadable input; exit code 2.
    #[error("{0}")]
    Config(String),
    /// Fitting, evaluation or output failure; exit code 3.
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

//! Library half of the `mazerl` command-line tool: experiment orchestration,
//! metrics aggregation, SVG figures and checkpoint evaluation. The binary in
//! `main.rs` is a thin argument-parsing shell over these functions.

pub mod aggregate;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod plot;

pub use aggregate::{aggregate, AggregateSeries, DEFAULT_BIN_WIDTH};
pub use error::{Error, Result};
pub use evaluate::{evaluate_checkpoint, greedy_action, EvalSummary};
pub use experiment::run_experiment;
pub use plot::{compute_scale, render_svg, Scale};

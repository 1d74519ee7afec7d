//! Scenario files, Monte Carlo validation, run directories and the CLI.

pub mod cli;
pub mod output;
pub mod scenario;
pub mod validate;

pub use scenario::Scenario;
pub use validate::{monte_carlo_validate, performance_loss, ValidationReport};

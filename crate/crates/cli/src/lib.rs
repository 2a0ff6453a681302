//! Batch workflows over the `mpenssar` library: simulate, fit, predict,
//! evaluate and theory constants. Each command writes a `manifest.json`
//! before its results and marks it completed at the end.

pub mod args;
pub mod error;
pub mod fit;
pub mod manifest;
pub mod report;
pub mod simulate;

pub use args::{Cli, Command};
pub use error::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Predict(a) => report::predict(a),
        Command::Evaluate(a) => report::evaluate(a),
        Command::Constants(a) => report::constants(a),
    }
}

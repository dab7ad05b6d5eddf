//! Experiment orchestration and the command-line interface.

mod cli;
mod config;
mod grid;

pub use cli::run_cli;
pub use config::{
    load_json, parse_json, ChristoffelConfig, ChristoffelMethod, ExperimentConfig, GeneratorSource, Scenario,
    TargetSource,
};
pub use grid::{
    lambda_from_laws, mean_se, measurement_count, prompt_laws, read_rows_csv, run_experiment, run_id,
    run_lambda_grid, run_reconstruction_grid, spike_target, summarize, write_laws, write_rows_csv, LambdaGrid,
    PromptLaw, ResultRow, RunOutput, SummaryRow,
};

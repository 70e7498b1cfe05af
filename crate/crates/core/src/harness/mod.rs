//! Configuration, seeded multi-trial experiments, CSV reporting and the
//! theory-check entry points used by the `dax` binary.

mod config;
mod experiment;
mod output;
mod theory_cli;

pub use config::{load_config, parse_methods, ExperimentConfig};
pub use experiment::{
    run_experiment, MeanStd, MethodResult, ResultBundle, SummaryRow, TrialResult,
};
pub use output::{
    biasvar_csv, format_float, hash_txt, ranks_csv, series_csv, summary_csv, summary_table,
    write_outputs,
};
pub use theory_cli::{check_theory, TheoryCheck, TheoryParams};

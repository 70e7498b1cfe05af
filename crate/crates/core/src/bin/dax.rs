use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dax::harness::{
    check_theory, load_config, parse_methods, run_experiment, summary_table, write_outputs,
    TheoryCheck, TheoryParams,
};
use dax::Execution;

#[derive(Parser)]
#[command(name = "dax", about = "Lorenz-96 ensemble filter twin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment and write CSV diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// seq-enkf, 4d-enkf, qpca-endcf or all.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run trials on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Monte-Carlo checks of covariance and perturbation identities.
    CheckTheory {
        #[arg(value_enum)]
        check: CheckName,
        #[command(flatten)]
        params: TheoryArgs,
    },
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckName {
    Unbiasedness,
    Wishart,
    EigenPerturbation,
    PerturbationVariance,
    FourthMoment,
}

impl From<CheckName> for TheoryCheck {
    fn from(c: CheckName) -> Self {
        match c {
            CheckName::Unbiasedness => TheoryCheck::Unbiasedness,
            CheckName::Wishart => TheoryCheck::Wishart,
            CheckName::EigenPerturbation => TheoryCheck::EigenPerturbation,
            CheckName::PerturbationVariance => TheoryCheck::PerturbationVariance,
            CheckName::FourthMoment => TheoryCheck::FourthMoment,
        }
    }
}

#[derive(Args)]
struct TheoryArgs {
    /// Residual dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Ensemble size.
    #[arg(long = "N")]
    ensemble_size: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    kappa: Option<usize>,
    /// Comma-separated population eigenvalues.
    #[arg(long, value_delimiter = ',')]
    spectrum: Option<Vec<f64>>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gains: Option<usize>,
    #[arg(long)]
    state_dim: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("dax {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            method,
            trials,
            seed,
            out,
            sequential,
        } => match run(config, method, trials, seed, out, sequential) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::CheckTheory { check, params } => {
            let p = TheoryParams {
                d: params.d,
                ensemble_size: params.ensemble_size,
                reps: params.reps,
                kappa: params.kappa,
                spectrum: params.spectrum,
                sigma: params.sigma,
                gains: params.gains,
                state_dim: params.state_dim,
                seed: params.seed,
                execution: Execution::Parallel,
            };
            match check_theory(check.into(), &p) {
                Ok((passed, lines)) => {
                    for l in lines {
                        println!("{l}");
                    }
                    if passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}

fn run(
    config: PathBuf,
    method: Option<String>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    sequential: bool,
) -> dax::Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(m) = method {
        cfg.methods = parse_methods(&m)?;
    }
    if let Some(t) = trials {
        cfg.n_trials = t;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let start = Instant::now();
    let bundle = run_experiment(&cfg, exec)?;
    write_outputs(&bundle, &cfg.output_dir)?;
    print!("{}", summary_table(&bundle));
    println!(
        "wrote {} ({:.2} s)",
        cfg.output_dir.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

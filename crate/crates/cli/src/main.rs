//! `mvcreg`: fit, inspect and simulate mixtures of regressions with known,
//! varying concentrations.
//!
//! Exit codes: 0 success, 2 malformed input or config, 3 singular
//! concentration Gramian, 4 singular weighted normal matrix, 5 study
//! comparison outside tolerance.

mod commands;
mod csvio;
mod error;
mod json;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvcreg::concentrations::DEFAULT_DET_TOL;
use mvcreg::estimator::DEFAULT_XTX_TOL;
use mvcreg::{FitOptions, Summation};

use commands::{Format, StudyOverrides};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "mvcreg",
    version,
    about = "Regression for mixtures with varying concentrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Numerics {
    /// Smallest accepted det Γ_N.
    #[arg(long, default_value_t = DEFAULT_DET_TOL)]
    det_tol: f64,
    /// Largest accepted condition number of XᵀAX.
    #[arg(long, default_value_t = DEFAULT_XTX_TOL)]
    xtx_tol: f64,
    /// Sequential summation and sequential component fits.
    #[arg(long)]
    deterministic: bool,
}

impl Numerics {
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            det_tol: self.det_tol,
            xtx_tol: self.xtx_tol,
            summation: if self.deterministic {
                Summation::Sequential
            } else {
                Summation::Parallel
            },
            parallel_components: !self.deterministic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit every component from a `y,x1..xd,p1..pM` CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Prepend a column of ones as regressor x0.
        #[arg(long)]
        intercept: bool,
        #[command(flatten)]
        numerics: Numerics,
    },
    /// Print the weight matrix and its biorthogonality check.
    Weights {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, default_value_t = DEFAULT_DET_TOL)]
        det_tol: f64,
    },
    /// Generate a dataset CSV from a simulation config.
    Simulate {
        #[arg(long, visible_alias = "input")]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_obs: Option<usize>,
    },
    /// Run a replication study and compare it with the asymptotic covariance.
    Study {
        #[arg(long, visible_alias = "input")]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        rel_tol: Option<f64>,
        #[command(flatten)]
        numerics: Numerics,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MVCREG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "MVCREG_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    // fails only if a pool already exists, which cannot happen this early
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<Option<CliError>, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit {
            input,
            output,
            format,
            intercept,
            numerics,
        } => {
            let (text, status) =
                commands::cmd_fit(&input, intercept, &numerics.fit_options(), format)?;
            emit(output.as_deref(), &text)?;
            Ok(status)
        }
        Command::Weights {
            input,
            output,
            format,
            det_tol,
        } => {
            let text = commands::cmd_weights(&input, det_tol, format)?;
            emit(output.as_deref(), &text)?;
            Ok(None)
        }
        Command::Simulate {
            config,
            output,
            seed,
            n_obs,
        } => {
            let text = commands::cmd_simulate(&config, seed, n_obs)?;
            emit(output.as_deref(), &text)?;
            Ok(None)
        }
        Command::Study {
            config,
            output,
            format,
            seed,
            reps,
            rel_tol,
            numerics,
        } => {
            let overrides = StudyOverrides {
                seed,
                reps,
                rel_tol,
            };
            let out = commands::run_study_file(&config, &overrides, &numerics.fit_options())?;
            emit(output.as_deref(), &commands::render_study(&out, format))?;
            Ok(commands::study_status(&out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

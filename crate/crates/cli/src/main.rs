//! `psd` - particle size distributions from optical scattering spectra.
//!
//! Subcommands: `mie-table` (tabulate the forward kernel), `simulate`
//! (synthetic measurements + ground truth), `fit` (hyperparameters by
//! marginal likelihood), `invert` (constrained/unconstrained posterior or
//! MAP), and `eval` (score an estimate against a known truth).
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 numeric failure,
//! 4 optimization failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psd_core::Error;

#[derive(Parser)]
#[command(
    name = "psd",
    version,
    about = "Particle size distribution retrieval from scattering spectra"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file (JSON); defaults to the built-in scenario.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Override the number of basis functions.
    #[arg(long, value_name = "INT")]
    q: Option<usize>,
    /// Override the kernel family (se|matern).
    #[arg(long, value_name = "KIND")]
    kernel: Option<String>,
    /// Override the Matérn smoothness.
    #[arg(long, value_name = "FLOAT")]
    nu: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate Q_sca and the kernel A(λ, r) on the configured grids.
    MieTable {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Simulate measurements and the ground-truth density.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fit hyperparameters by maximizing a log marginal likelihood.
    Fit {
        #[command(flatten)]
        common: CommonOpts,
        /// Measurement CSV (wavelength,mu[,sigma]).
        #[arg(long, value_name = "PATH")]
        measurements: PathBuf,
        /// Objective: standard | joint.
        #[arg(long, default_value = "joint")]
        objective: String,
        /// Override the number of optimizer restarts.
        #[arg(long, value_name = "INT")]
        restarts: Option<usize>,
    },
    /// Reconstruct the size distribution from measurements.
    Invert {
        #[command(flatten)]
        common: CommonOpts,
        /// Measurement CSV (wavelength,mu[,sigma]).
        #[arg(long, value_name = "PATH")]
        measurements: PathBuf,
        /// Fit summary JSON whose theta overrides the config kernel.
        #[arg(long, value_name = "PATH")]
        theta: Option<PathBuf>,
        /// Enforce the unit-normalization constraint (default).
        #[arg(long, conflicts_with = "unconstrained")]
        constrained: bool,
        /// Drop the normalization constraint.
        #[arg(long)]
        unconstrained: bool,
        /// Report the Lagrange MAP point estimate.
        #[arg(long, conflicts_with = "posterior")]
        map: bool,
        /// Report the full posterior (default).
        #[arg(long)]
        posterior: bool,
    },
    /// Score a stored estimate against a stored truth.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Result CSV (r,rho_mean,rho_lo95,rho_hi95).
        #[arg(long, value_name = "PATH")]
        result: PathBuf,
        /// Truth CSV (r,rho_true).
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        /// Optional measurement CSV for the forward re-prediction check.
        #[arg(long, value_name = "PATH")]
        measurements: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Numeric(_) => 3,
        Error::Optimization(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("PSD_INVERT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MieTable { common } => commands::mie_table(&common),
        Command::Simulate { common } => commands::simulate(&common),
        Command::Fit {
            common,
            measurements,
            objective,
            restarts,
        } => commands::fit(&common, &measurements, &objective, restarts),
        Command::Invert {
            common,
            measurements,
            theta,
            unconstrained,
            map,
            ..
        } => commands::invert(&common, &measurements, theta.as_deref(), unconstrained, map),
        Command::Eval {
            common,
            result,
            truth,
            measurements,
        } => commands::eval(&common, &result, &truth, measurements.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("psd: error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

impl CommonOpts {
    /// Loads the configuration and applies flag overrides.
    fn load_config(&self) -> Result<psd_core::Config, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                psd_core::Config::from_json(&text)?
            }
            None => psd_core::Config::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(q) = self.q {
            cfg.basis.q = q;
        }
        if let Some(kind) = &self.kernel {
            cfg.kernel.kind = kind.parse()?;
        }
        if let Some(nu) = self.nu {
            cfg.kernel.nu = nu;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

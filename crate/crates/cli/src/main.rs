//! `fas` — outage probability of an MRC-based fluid antenna system.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical
//! nonconvergence or failed validation.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Scenario;
use run::{parse_methods, SweepSpec, SweepVar};

/// CLI failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: String) -> Self {
        CliError { code: 1, message }
    }
    fn numerical(message: String) -> Self {
        CliError { code: 2, message }
    }
}

impl From<fas_core::Error> for CliError {
    fn from(e: fas_core::Error) -> Self {
        match e {
            fas_core::Error::Numerical(_) => CliError::numerical(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fas",
    version,
    about = "Outage probability of best-K/MRC fluid antenna reception under correlated Rician fading"
)]
struct Cli {
    /// Worker threads (falls back to FAS_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Scenario file (flat key = value); defaults reproduce the headline
    /// configuration M=15, K=2, W=0.2, kappa=1, gamma_th=5 dB.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte Carlo trials override.
    #[arg(long)]
    trials: Option<u64>,
    /// Monte Carlo seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one variable and write a CSV (plus a .meta.json sidecar).
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Output CSV path.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        /// Swept variable.
        #[arg(long, value_enum, default_value = "snr_db")]
        var: SweepVar,
        /// Sweep start (dB for snr_db).
        #[arg(long, default_value_t = -2.0)]
        from: f64,
        /// Sweep stop.
        #[arg(long, default_value_t = 14.0)]
        to: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 17)]
        steps: usize,
        /// Comma-separated methods: analytical, lb_closed, lb_numeric,
        /// asymptotic, mc_best_k, mc_rps.
        #[arg(long, default_value = "analytical,lb_closed,asymptotic,mc_best_k")]
        methods: String,
    },
    /// Evaluate one scenario with every method.
    Single {
        #[command(flatten)]
        common: CommonOpts,
        /// Optional one-row CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fast invariant suite and a Monte Carlo smoke comparison.
    Validate {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn load_scenario(common: &CommonOpts) -> Result<Scenario, CliError> {
    let mut sc = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            Scenario::parse(&text).map_err(|e| CliError::config(format!("{e:#}")))?
        }
        None => Scenario::default(),
    };
    if let Some(t) = common.trials {
        sc.trials = t;
    }
    if let Some(s) = common.seed {
        sc.seed = s;
    }
    // fail early on invalid scenario structure
    sc.system_config().map_err(CliError::from)?;
    Ok(sc)
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    let n = threads.or_else(|| {
        std::env::var("FAS_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Sweep {
            common,
            out,
            var,
            from,
            to,
            steps,
            methods,
        } => {
            let sc = load_scenario(&common)?;
            let spec = SweepSpec {
                var,
                start: from,
                stop: to,
                steps,
                methods: parse_methods(&methods)?,
            };
            run::sweep(&sc, &spec, &out)
        }
        Command::Single { common, out } => {
            let sc = load_scenario(&common)?;
            run::single(&sc, out.as_deref())
        }
        Command::Validate { common } => {
            let sc = load_scenario(&common)?;
            run::validate(&sc)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

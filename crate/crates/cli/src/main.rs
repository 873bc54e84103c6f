//! `ra-orient` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use ra_orient::experiments::{
    emit_optimized, emit_report, optimize_geometries, run_sweep, sidecar_path, validate_surrogates, write_validation,
    Axis, Outputs, ScenarioConfig, Scheme, SweepSpec,
};
use ra_orient::Error;

#[derive(Parser)]
#[command(name = "ra-orient", version, about = "Rotatable-antenna orientation design and validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Print a template with `ra-orient config`.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `mc.seed` from the scenario file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Mrc,
    Wzf,
    Nmse,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the orientations of every geometry and write one row per element.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        receiver: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one scenario parameter over paired geometries.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// N, K, power, theta_max, b, pilot_fraction or angular_separation.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Comma-separated schemes: mrc-opt, mrc-ran, wzf-opt, wzf-ran, fix, nmse-opt.
        #[arg(long, value_delimiter = ',', required = true)]
        schemes: Vec<Scheme>,
        /// Also simulate ergodic rates (slow).
        #[arg(long)]
        ergodic: bool,
        /// Skip the closed-form surrogates and NMSE.
        #[arg(long)]
        no_surrogate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare optimized surrogates with simulated ergodic rates.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Print the default scenario.
    Config {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.mc.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Optimize { common, receiver, out } => {
            let cfg = load(&common)?;
            let scheme = match receiver {
                Target::Mrc => Scheme::MrcOpt,
                Target::Wzf => Scheme::WzfOpt,
                Target::Nmse => Scheme::NmseOpt,
            };
            let results = optimize_geometries(&cfg, scheme)?;
            emit_optimized(&results, scheme, &cfg, &out)?;
            info!("wrote {} geometries to {}", results.len(), out.display());
        }
        Command::Sweep { common, axis, values, schemes, ergodic, no_surrogate, out } => {
            let cfg = load(&common)?;
            let spec = SweepSpec { axis, values, schemes, outputs: Outputs { surrogate: !no_surrogate, ergodic } };
            let report = run_sweep(&cfg, &spec)?;
            emit_report(&report, &out)?;
            if !report.failures.is_empty() {
                eprintln!(
                    "warning: {} geometry evaluations excluded, see {}",
                    report.failures.len(),
                    sidecar_path(&out).display()
                );
            }
        }
        Command::Validate { common } => {
            let cfg = load(&common)?;
            let report = validate_surrogates(&cfg)?;
            write_validation(&report, std::io::stdout().lock()).map_err(|source| Error::Io { path: "<stdout>".into(), source })?;
            if !report.passed() {
                return Err(Error::Precondition("surrogate validation failed".into()));
            }
        }
        Command::Config { seed } => {
            let mut cfg = ScenarioConfig::default();
            if let Some(seed) = seed {
                cfg.mc.seed = seed;
            }
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

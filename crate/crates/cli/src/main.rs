use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtlqr::fleet::excitation_level;
use mtlqr::harness::{self, parse_config, ExperimentConfig};
use mtlqr::lqr::lqr_gain;
use mtlqr::{selfcheck, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "mtlqr", version, about = "Multi-task adaptive LQR simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write regret curves and diagnostics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides `workers` and MTLQR_WORKERS).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the built-in oracle checks.
    Check,
    /// Describe the fleets a config would build.
    FleetInfo {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, Error> {
    let cfg = match path {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn config_error(e: Error) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn run(config: Option<PathBuf>, out: Option<PathBuf>, workers: Option<usize>) -> ExitCode {
    let mut cfg = match load(config.as_ref()) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    if let Some(n) = workers {
        if n == 0 {
            return config_error(Error::Parse("--workers must be positive".into()));
        }
        cfg.worker_count = n;
    }
    match harness::run_experiment(&cfg) {
        Ok(output) => {
            for c in output.all_curves() {
                let last = c.mean.len() - 1;
                println!("H={:<4} seeds={:<3} final regret {:.4e} +/- {:.2e}", c.h, c.n_seeds, c.mean[last], c.stderr[last]);
            }
            if !output.failures.is_empty() {
                println!("{} seed run(s) failed; see failures.log", output.failures.len());
            }
            println!("results in {}", cfg.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Parse(_)) => config_error(e),
        Err(e) => {
            eprintln!("experiment failed: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn check() -> ExitCode {
    let outcomes = selfcheck::run_all();
    for c in &outcomes {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if outcomes.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILURE)
    }
}

fn summary(mut v: Vec<f64>) -> String {
    v.sort_by(f64::total_cmp);
    format!("min {:.3e}  median {:.3e}  max {:.3e}", v[0], v[v.len() / 2], v[v.len() - 1])
}

fn fleet_info(config: Option<PathBuf>) -> ExitCode {
    let cfg = match load(config.as_ref()) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let seed = cfg.seeds[0];
    for &h in &cfg.h_values {
        let fleet = match harness::build_fleet(&cfg, h, seed) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("H={h}: {e}");
                return ExitCode::from(EXIT_FAILURE);
            }
        };
        let phi = &fleet.basis.phi;
        let mut at_k0 = Vec::new();
        let mut at_kstar = Vec::new();
        for (sys, k0) in fleet.systems.iter().zip(&fleet.k0) {
            let levels = excitation_level(phi, k0)
                .and_then(|a0| Ok((a0, excitation_level(phi, &lqr_gain(sys, &fleet.cost)?)?)));
            match levels {
                Ok((a0, a1)) => {
                    at_k0.push(a0);
                    at_kstar.push(a1);
                }
                Err(e) => {
                    eprintln!("H={h}: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            }
        }
        println!("H = {h} (seed {seed}), d_x = {}, d_u = {}, d_theta = {}", fleet.dx(), fleet.du(), phi.dim());
        println!("  alpha^2 at K0:     {}", summary(at_k0));
        println!("  alpha^2 at K_star: {}", summary(at_kstar));
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, out, workers } => run(config, out, workers),
        Command::Check => check(),
        Command::FleetInfo { config } => fleet_info(config),
    }
}

//! Multi-seed experiments: fleets × seeds, the paired single-task
//! baseline, aggregation onto a common grid and CSV output.

pub mod config;
pub mod curves;

use std::fs::{self, File};
use std::io::{BufWriter, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fleet::{build_cartpole_fleet_with, build_synthetic_fleet, CartpoleFleetOptions, Fleet};
use crate::matkit::{perturbed_basis, OrthoBasis};
use crate::orchestrator::{run_multitask, run_singletask_baseline, write_diagnostics, EpochDiagnostics};
use crate::rng::RandomStream;

pub use config::{parse_config, parse_config_str, render_config, ExperimentConfig, FleetKind};
pub use curves::{
    aggregate, fit_growth_exponent, read_regret_csv, t_grid, write_regret_csv, GrowthEstimate, RegretCurve, BASELINE_H,
};

/// Agent whose regret is reported (the nominal task).
pub const NOMINAL_AGENT: usize = 0;

const PHI0_STREAM: u64 = 0xB0;

/// Fleet for one `(H, seed)` cell.
pub fn build_fleet(cfg: &ExperimentConfig, h: usize, seed: u64) -> Result<Fleet> {
    let rng = RandomStream::new(seed);
    match cfg.fleet_kind {
        FleetKind::Cartpole => {
            let opts = CartpoleFleetOptions { noise_var: cfg.noise_var, ..CartpoleFleetOptions::default() };
            build_cartpole_fleet_with(h, &rng, &opts)
        }
        FleetKind::Synthetic { dx, du, d_theta, margin } => build_synthetic_fleet(dx, du, d_theta, h, margin, &rng),
    }
}

/// Initial basis at `phi0_distance` from the fleet's, drawn from the seed.
pub fn initial_basis(cfg: &ExperimentConfig, fleet: &Fleet, seed: u64) -> Result<OrthoBasis> {
    if cfg.phi0_distance == 0.0 {
        return Ok(fleet.basis.phi.clone());
    }
    let mut rng = RandomStream::new(seed).fork(&[PHI0_STREAM]);
    perturbed_basis(&fleet.basis.phi, cfg.phi0_distance, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    /// [`BASELINE_H`] for baseline runs.
    pub h: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Multitask curves in the order of `H_values`.
    pub curves: Vec<RegretCurve>,
    pub baseline: RegretCurve,
    pub failures: Vec<SeedFailure>,
}

impl ExperimentOutput {
    /// Multitask curves followed by the baseline, as written to `regret.csv`.
    pub fn all_curves(&self) -> Vec<RegretCurve> {
        let mut all = self.curves.clone();
        all.push(self.baseline.clone());
        all
    }

    pub fn curve(&self, h: usize) -> Option<&RegretCurve> {
        if h == BASELINE_H {
            return Some(&self.baseline);
        }
        self.curves.iter().find(|c| c.h == h)
    }
}

#[derive(Debug, Clone, Copy)]
enum Job {
    Multitask { h: usize, seed: u64 },
    Baseline { seed: u64 },
}

struct JobResult {
    samples: Vec<f64>,
    diagnostics: Option<Vec<EpochDiagnostics>>,
}

fn run_job(cfg: &ExperimentConfig, job: Job, grid: &[usize]) -> Result<JobResult> {
    let es = cfg.epochs()?;
    let params = cfg.loop_params();
    match job {
        Job::Multitask { h, seed } => {
            let fleet = build_fleet(cfg, h, seed)?;
            let phi0 = initial_basis(cfg, &fleet, seed)?;
            let out = run_multitask(&fleet, &es, &cfg.schedule, &params, &phi0, &RandomStream::new(seed))?;
            log::info!("H={h} seed={seed}: {} syntheses fell back to K0", out.fallbacks);
            Ok(JobResult {
                samples: curves::sample_ledger(&out.ledger, NOMINAL_AGENT, grid)?,
                diagnostics: Some(out.diagnostics),
            })
        }
        Job::Baseline { seed } => {
            let fleet = build_fleet(cfg, cfg.h_values[0], seed)?;
            let ledger = run_singletask_baseline(&fleet, NOMINAL_AGENT, &es, &cfg.schedule, &params, &RandomStream::new(seed))?;
            Ok(JobResult { samples: curves::sample_ledger(&ledger, 0, grid)?, diagnostics: None })
        }
    }
}

fn write_file(path: &std::path::Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Runs every `(H, seed)` cell and the baseline for every seed, writes
/// `regret.csv`, `diagnostics_H<H>_seed<seed>.csv`, `failures.log` and
/// `config.txt` into the output directory, and returns the curves.
///
/// A failing seed is logged and skipped; the experiment fails only when
/// some curve has no completed seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let es = cfg.epochs()?;
    let grid = t_grid(&es);
    let mut jobs = Vec::new();
    for &h in &cfg.h_values {
        for &seed in &cfg.seeds {
            jobs.push(Job::Multitask { h, seed });
        }
    }
    for &seed in &cfg.seeds {
        jobs.push(Job::Baseline { seed });
    }
    let workers = cfg.resolved_workers();
    log::info!("running {} jobs on {workers} worker(s)", jobs.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Setup(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<JobResult>> = pool.install(|| jobs.par_iter().map(|&j| run_job(cfg, j, &grid)).collect());

    fs::create_dir_all(&cfg.output_dir)?;
    let mut failures = Vec::new();
    let mut per_h: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.h_values.len()];
    let mut base_runs = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let (h, seed) = match *job {
            Job::Multitask { h, seed } => (h, seed),
            Job::Baseline { seed } => (BASELINE_H, seed),
        };
        match res {
            Ok(r) => {
                if let Some(diags) = &r.diagnostics {
                    let path = cfg.output_dir.join(format!("diagnostics_H{h}_seed{seed}.csv"));
                    write_file(&path, |w| write_diagnostics(diags, w))?;
                }
                match *job {
                    Job::Multitask { h, .. } => {
                        let idx = cfg.h_values.iter().position(|&x| x == h).expect("job built from H_values");
                        per_h[idx].push(r.samples);
                    }
                    Job::Baseline { .. } => base_runs.push(r.samples),
                }
            }
            Err(e) => {
                log::error!("H={h} seed={seed} failed: {e}");
                failures.push(SeedFailure { h, seed, message: e.to_string() });
            }
        }
    }
    write_file(&cfg.output_dir.join("failures.log"), |w| {
        for f in &failures {
            writeln!(w, "H={} seed={}: {}", f.h, f.seed, f.message)?;
        }
        Ok(())
    })?;
    write_file(&cfg.output_dir.join("config.txt"), |w| w.write_all(render_config(cfg).as_bytes()))?;

    let curves = cfg
        .h_values
        .iter()
        .zip(&per_h)
        .map(|(&h, runs)| aggregate(h, &grid, runs))
        .collect::<Result<Vec<_>>>()?;
    let baseline = aggregate(BASELINE_H, &grid, &base_runs)?;
    let output = ExperimentOutput { curves, baseline, failures };
    write_file(&cfg.output_dir.join("regret.csv"), |w| write_regret_csv(&output.all_curves(), w))?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &std::path::Path) -> ExperimentConfig {
        let text = format!(
            "fleet = synthetic\nH = 5\nseeds = 7\ntau1 = 8\nk_fin = 3\nN = 20\noutput_dir = {}\nworkers = 1\n",
            dir.display()
        );
        parse_config_str(&text).unwrap()
    }

    #[test]
    fn one_seed_one_h_gives_two_curves() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small(dir.path())).unwrap();
        assert_eq!(out.curves.len(), 1);
        assert_eq!(out.baseline.h, BASELINE_H);
        assert!(out.failures.is_empty());
        let text = fs::read_to_string(dir.path().join("regret.csv")).unwrap();
        let curves = read_regret_csv(text.as_bytes()).unwrap();
        assert_eq!(curves.iter().map(|c| c.h).collect::<Vec<_>>(), vec![5, 1]);
        assert!(curves.iter().all(|c| c.n_seeds == 1 && c.stderr.iter().all(|&s| s == 0.0)));
        assert!(dir.path().join("diagnostics_H5_seed7.csv").exists());
    }

    #[test]
    fn repeat_runs_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = small(a.path());
        cfg.seeds = vec![1, 2];
        run_experiment(&cfg).unwrap();
        cfg.output_dir = b.path().to_path_buf();
        cfg.worker_count = 3;
        run_experiment(&cfg).unwrap();
        for f in ["regret.csv", "diagnostics_H5_seed2.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }
}

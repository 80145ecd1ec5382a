//! Regret curves on a common time grid, their CSV form and growth fits.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::orchestrator::EpochSchedule;
use crate::sim::RegretLedger;

/// Interior grid points per epoch.
pub const INTERIOR_POINTS: usize = 32;

/// `H` written for the single-task baseline.
pub const BASELINE_H: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub h: usize,
    pub grid: Vec<usize>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_seeds: usize,
}

/// Epoch boundaries plus [`INTERIOR_POINTS`] evenly spaced points inside
/// each epoch, strictly increasing and starting after 0.
pub fn t_grid(es: &EpochSchedule) -> Vec<usize> {
    let mut grid = Vec::new();
    for k in 1..=es.k_fin {
        let r = es.epoch(k);
        let len = r.len() as f64;
        for j in 1..=INTERIOR_POINTS {
            let t = r.start + (j as f64 * len / (INTERIOR_POINTS + 1) as f64).round() as usize;
            grid.push(t);
        }
        grid.push(r.end);
    }
    grid.retain(|&t| t > 0);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Regret of `agent` at each grid time.
pub fn sample_ledger(ledger: &RegretLedger, agent: usize, grid: &[usize]) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&t| {
            ledger
                .regret_at(agent, t)
                .ok_or_else(|| Error::Diagnostic(format!("ledger of agent {agent} has no sample at t = {t}")))
        })
        .collect()
}

/// Mean and standard error (`sd / sqrt(n)`, zero for one run) across runs.
pub fn aggregate(h: usize, grid: &[usize], runs: &[Vec<f64>]) -> Result<RegretCurve> {
    if runs.is_empty() {
        return Err(Error::Diagnostic(format!("no completed runs for H = {h}")));
    }
    let n = runs.len() as f64;
    let mut mean = vec![0.0; grid.len()];
    let mut stderr = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        let m = runs.iter().map(|r| r[i]).sum::<f64>() / n;
        mean[i] = m;
        if runs.len() > 1 {
            let var = runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[i] = (var / n).sqrt();
        }
    }
    Ok(RegretCurve { h, grid: grid.to_vec(), mean, stderr, n_seeds: runs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthEstimate {
    /// Least-squares slope of `log regret` against `log t`.
    Exponent(f64),
    /// Mean regret was not positive somewhere in the window.
    NonPositive { t: usize },
}

impl GrowthEstimate {
    pub fn exponent(&self) -> Option<f64> {
        match self {
            GrowthEstimate::Exponent(e) => Some(*e),
            GrowthEstimate::NonPositive { .. } => None,
        }
    }
}

/// Slope of `log(mean regret)` versus `log t` over the trailing `window`
/// fraction of the grid.
pub fn fit_growth_exponent(curve: &RegretCurve, window: f64) -> Result<GrowthEstimate> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::Diagnostic(format!("window fraction must lie in (0, 1], got {window}")));
    }
    let n = curve.grid.len();
    let take = ((n as f64) * window).ceil() as usize;
    if take < 5 {
        return Err(Error::Diagnostic(format!("only {take} grid points in the window, need 5")));
    }
    let start = n - take;
    let mut xs = Vec::with_capacity(take);
    let mut ys = Vec::with_capacity(take);
    for i in start..n {
        if !(curve.mean[i] > 0.0) {
            return Ok(GrowthEstimate::NonPositive { t: curve.grid[i] });
        }
        xs.push((curve.grid[i] as f64).ln());
        ys.push(curve.mean[i].ln());
    }
    let mx = xs.iter().sum::<f64>() / take as f64;
    let my = ys.iter().sum::<f64>() / take as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(GrowthEstimate::Exponent(sxy / sxx))
}

pub const CSV_HEADER: &str = "H,t,mean_regret,stderr,n_seeds";

/// One row per curve and grid point; floats carry 9 significant digits.
pub fn write_regret_csv<W: Write>(curves: &[RegretCurve], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for c in curves {
        for i in 0..c.grid.len() {
            writeln!(out, "{},{},{:.8e},{:.8e},{}", c.h, c.grid[i], c.mean[i], c.stderr[i], c.n_seeds)?;
        }
    }
    Ok(())
}

/// Reads curves written by [`write_regret_csv`]; consecutive rows with the
/// same `H` form one curve.
pub fn read_regret_csv<R: BufRead>(input: R) -> Result<Vec<RegretCurve>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        _ => return Err(Error::Parse(format!("expected header '{CSV_HEADER}'"))),
    }
    let mut curves: Vec<RegretCurve> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("row {}: malformed '{line}'", i + 2));
        if f.len() != 5 {
            return Err(bad());
        }
        let h: usize = f[0].parse().map_err(|_| bad())?;
        let t: usize = f[1].parse().map_err(|_| bad())?;
        let m: f64 = f[2].parse().map_err(|_| bad())?;
        let s: f64 = f[3].parse().map_err(|_| bad())?;
        let n: usize = f[4].parse().map_err(|_| bad())?;
        match curves.last_mut() {
            Some(c) if c.h == h => {
                c.grid.push(t);
                c.mean.push(m);
                c.stderr.push(s);
            }
            _ => curves.push(RegretCurve { h, grid: vec![t], mean: vec![m], stderr: vec![s], n_seeds: n }),
        }
    }
    Ok(curves)
}

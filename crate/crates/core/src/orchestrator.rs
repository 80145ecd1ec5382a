//! The adaptive control loop: doubling epochs of certainty-equivalent
//! control with exploration, per-agent least squares on the shared basis,
//! and DFW representation updates between epochs.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fleet::Fleet;
use crate::lqr::{avg_cost, lqr, lqr_gain, StateSpace};
use crate::matkit::{subspace_distance, vec_inv, Mat, OrthoBasis, Vector};
use crate::mtlearn::{dfw_run, full_ls, ls_weights, CovStats, DfwMode};
use crate::rng::RandomStream;
use crate::sim::{rollout, stage_costs, AbortBounds, NoiseModel, RegretLedger, Trajectory};

/// Doubling epochs with boundaries `tau_0 = 0`, `tau_k = tau1 * 2^(k-1)`.
/// Epoch `k` covers the half-open range `[tau_{k-1}, tau_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochSchedule {
    pub tau1: usize,
    pub k_fin: usize,
}

impl EpochSchedule {
    pub fn new(tau1: usize, k_fin: usize) -> Result<Self> {
        if tau1 < 2 || k_fin < 1 {
            return Err(Error::Setup(format!("need tau1 >= 2 and k_fin >= 1 (got {tau1}, {k_fin})")));
        }
        if k_fin > 40 {
            return Err(Error::Setup(format!("k_fin = {k_fin} overflows the horizon")));
        }
        Ok(Self { tau1, k_fin })
    }

    /// `tau_k`; `tau_0 = 0`.
    pub fn boundary(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.tau1 << (k - 1)
        }
    }

    /// `T = tau1 * 2^(k_fin - 1)`.
    pub fn horizon(&self) -> usize {
        self.boundary(self.k_fin)
    }

    pub fn epoch(&self, k: usize) -> Range<usize> {
        self.boundary(k - 1)..self.boundary(k)
    }

    /// Least-squares and DFW parts of epoch `k`: the first `ceil(len/2)`
    /// steps and the rest.
    pub fn split(&self, k: usize) -> (Range<usize>, Range<usize>) {
        let r = self.epoch(k);
        let mid = r.start + (r.len() + 1) / 2;
        (r.start..mid, mid..r.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationMode {
    /// Weights hard to identify without exploration.
    Hard,
    /// Persistently excited weights.
    Easy,
    /// `sigma1_sq * 2^(-(k-1)/2)`.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationSchedule {
    pub mode: ExplorationMode,
    /// Proxy for the per-epoch DFW contraction factor.
    pub rho_pow: f64,
    pub sigma1_sq: f64,
    /// Initial subspace distance, when known.
    pub d0: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self { mode: ExplorationMode::Empirical, rho_pow: 0.5, sigma1_sq: 0.3, d0: 0.99 }
    }
}

/// Exploration variance `sigma_k^2` for epoch `k` ending at `tau_k`.
pub fn sigma_schedule(sched: &ExplorationSchedule, k: usize, tau_k: usize, h: usize, d_theta: usize, d_u: usize) -> f64 {
    let tau = tau_k.max(1) as f64;
    let hf = h.max(1) as f64;
    let rep = sched.rho_pow.powi(k.saturating_sub(1) as i32) * sched.d0;
    let raw = match sched.mode {
        ExplorationMode::Hard => (tau.powf(-0.25) * hf.powf(-0.2))
            .max((d_theta as f64 / (d_u as f64 * tau)).sqrt())
            .max(rep),
        ExplorationMode::Easy => (1.0 / (tau * hf).sqrt()).max(rep),
        ExplorationMode::Empirical => sched.sigma1_sq * 2f64.powf(-((k as f64) - 1.0) / 2.0),
    };
    if raw > 1.0 {
        log::warn!("exploration variance {raw:.4} at epoch {k} clamped to 1");
        1.0
    } else {
        raw
    }
}

/// When the representation update runs relative to the per-agent fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOrder {
    /// DFW on epoch `k`'s second slice, then least squares on its first
    /// slice with the refreshed basis. The basis used in epoch `k` has had
    /// `k` rounds of updates.
    RepresentationFirst,
    /// Least squares with the basis from the previous epoch, then DFW. The
    /// first certainty-equivalent gain is fit on `phi0` itself.
    WeightsFirst,
}

/// Loop parameters shared by the multitask run and the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    pub x_b: f64,
    pub k_b: f64,
    /// DFW iterations per epoch.
    pub n_iters: usize,
    pub eta: f64,
    pub dfw_mode: DfwMode,
    pub order: UpdateOrder,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            x_b: 25.0,
            k_b: 15.0,
            n_iters: 1000,
            eta: 0.25,
            dfw_mode: DfwMode::FullData,
            order: UpdateOrder::RepresentationFirst,
        }
    }
}

/// One row of the per-epoch diagnostics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochDiagnostics {
    pub k: usize,
    pub tau_k: usize,
    pub sigma_k_sq: f64,
    /// Distance from the truth of the basis used for epoch `k`'s fit.
    pub subspace_distance: f64,
    /// Mean `|[A B]_hat - [A B]|_F` over agents that estimated this epoch;
    /// NaN when none did.
    pub mean_param_err: f64,
    /// Agents aborted by the end of epoch `k`.
    pub aborts: usize,
}

#[derive(Debug, Clone)]
pub struct MultitaskOutcome {
    pub ledger: RegretLedger,
    pub diagnostics: Vec<EpochDiagnostics>,
    /// Gains each agent would play in the epoch after the last.
    pub next_gains: Vec<Mat>,
    pub final_phi: OrthoBasis,
    /// Number of certainty-equivalent syntheses that fell back to `K0`.
    pub fallbacks: usize,
}

struct AgentState {
    gain: Mat,
    x: Vector,
    aborted: bool,
}

/// Plays one epoch. Returns the trajectory over the whole epoch and
/// whether the agent stayed on its certainty-equivalent gain throughout.
#[allow(clippy::too_many_arguments)]
fn play_epoch(
    sys: &StateSpace,
    k0: &Mat,
    state: &mut AgentState,
    sigma_u: f64,
    len: usize,
    noise: &NoiseModel,
    bounds: &AbortBounds,
    rng: &mut RandomStream,
) -> Result<(Trajectory, bool)> {
    if state.aborted {
        let (traj, _) = rollout(sys, k0, 0.0, len, &state.x, noise, None, rng)?;
        state.x = traj.last_state().clone();
        return Ok((traj, false));
    }
    let (mut traj, abort) = rollout(sys, &state.gain, sigma_u, len, &state.x, noise, Some(bounds), rng)?;
    if let Some(at) = abort.abort_time {
        log::info!("abort at epoch step {at} ({:?})", abort.reason);
        state.aborted = true;
        let (rest, _) = rollout(sys, k0, 0.0, len - at, traj.last_state(), noise, None, rng)?;
        traj.extend(&rest);
    }
    state.x = traj.last_state().clone();
    Ok((traj, !state.aborted))
}

fn check_setup(fleet: &Fleet, x_b: f64, k_b: f64) -> Result<()> {
    fleet.validate().map_err(|e| Error::Setup(e.to_string()))?;
    if !(x_b > 0.0 && k_b > 0.0) {
        return Err(Error::Setup(format!("abort bounds must be positive (x_b = {x_b}, K_b = {k_b})")));
    }
    Ok(())
}

fn optimal_costs(fleet: &Fleet) -> Result<Vec<f64>> {
    fleet
        .systems
        .iter()
        .enumerate()
        .map(|(h, sys)| {
            let (_, k) = lqr(sys, &fleet.cost).map_err(|e| e.for_agent(h))?;
            avg_cost(sys, &fleet.cost, &k).map_err(|e| e.for_agent(h))
        })
        .collect()
}

fn synthesize(ab: &Mat, fleet: &Fleet, h: usize, k: usize) -> Option<Mat> {
    let gain = StateSpace::from_stacked(ab).and_then(|sys| lqr_gain(&sys, &fleet.cost));
    match gain {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("agent {h}: synthesis after epoch {k} failed ({e}); falling back to K0");
            None
        }
    }
}

struct Played {
    costs: Vec<f64>,
    /// Least-squares statistics and DFW slice, absent once aborted.
    data: Option<(CovStats, Trajectory)>,
}

/// Runs the shared-representation certainty-equivalent loop on every agent
/// of `fleet`. Agent `h` draws its randomness from `rng.fork(&[h, k])` in
/// epoch `k`, so results do not depend on scheduling.
pub fn run_multitask(
    fleet: &Fleet,
    es: &EpochSchedule,
    xs: &ExplorationSchedule,
    params: &LoopParams,
    phi0: &OrthoBasis,
    rng: &RandomStream,
) -> Result<MultitaskOutcome> {
    check_setup(fleet, params.x_b, params.k_b)?;
    let (h_count, dx, du) = (fleet.len(), fleet.dx(), fleet.du());
    let phi_star = &fleet.basis.phi;
    if phi0.ambient_dim() != phi_star.ambient_dim() || phi0.dim() != phi_star.dim() {
        return Err(Error::Setup(format!(
            "initial basis is {}x{}, fleet basis is {}x{}",
            phi0.ambient_dim(),
            phi0.dim(),
            phi_star.ambient_dim(),
            phi_star.dim()
        )));
    }
    if params.n_iters == 0 || !(params.eta > 0.0) {
        return Err(Error::Setup("DFW needs N >= 1 and a positive step size".into()));
    }
    if params.dfw_mode == DfwMode::Split {
        let shortest = es.split(1).1.len();
        if shortest < 2 * params.n_iters {
            return Err(Error::Setup(format!(
                "split-mode DFW needs at least {} steps per slice, the first epoch leaves {shortest}",
                2 * params.n_iters
            )));
        }
    }
    let horizon = es.horizon();
    let bounds = AbortBounds { x_b: params.x_b, k_b: params.k_b, horizon };
    let noise = NoiseModel::gaussian(&fleet.cost.w_cov);
    let mut ledger = RegretLedger::new(optimal_costs(fleet)?);
    let mut agents: Vec<AgentState> = fleet
        .k0
        .iter()
        .map(|k0| AgentState { gain: k0.clone(), x: Vector::zeros(dx), aborted: false })
        .collect();
    let mut phi = phi0.clone();
    let mut diagnostics = Vec::with_capacity(es.k_fin);
    let mut fallbacks = 0;

    for k in 1..=es.k_fin {
        let tau_k = es.boundary(k);
        let sigma_sq = sigma_schedule(xs, k, tau_k, h_count, phi.dim(), du);
        let sigma = sigma_sq.sqrt();
        let epoch = es.epoch(k);
        let (ls_range, dfw_range) = es.split(k);
        let rel = |r: &Range<usize>| r.start - epoch.start..r.end - epoch.start;
        let (ls_rel, dfw_rel) = (rel(&ls_range), rel(&dfw_range));

        let played: Vec<Played> = agents
            .par_iter_mut()
            .enumerate()
            .map(|(h, state)| -> Result<Played> {
                let mut stream = rng.fork(&[h as u64, k as u64]);
                let (traj, usable) =
                    play_epoch(&fleet.systems[h], &fleet.k0[h], state, sigma, epoch.len(), &noise, &bounds, &mut stream)
                        .map_err(|e| e.for_agent(h))?;
                let costs = stage_costs(&traj, &fleet.cost);
                let data = if usable {
                    let stats = CovStats::from_steps(&traj, ls_rel.clone()).map_err(|e| e.for_agent(h))?;
                    Some((stats, traj.slice(dfw_rel.clone())))
                } else {
                    None
                };
                Ok(Played { costs, data })
            })
            .collect::<Result<Vec<_>>>()?;
        for (h, p) in played.iter().enumerate() {
            ledger.record_stage_costs(h, &p.costs)?;
        }

        let update = |phi: &OrthoBasis| -> Result<OrthoBasis> {
            let trajs: Vec<Trajectory> = played
                .iter()
                .enumerate()
                .filter_map(|(h, p)| {
                    let (_, t) = p.data.as_ref()?;
                    match CovStats::from_trajectory(t) {
                        Ok(s) if s.is_excited() => Some(t.clone()),
                        _ => {
                            log::debug!("agent {h}: DFW slice of epoch {k} is not excited, skipped");
                            None
                        }
                    }
                })
                .collect();
            if trajs.is_empty() {
                log::warn!("no agent contributed to the representation update in epoch {k}");
                return Ok(phi.clone());
            }
            match dfw_run(phi, &trajs, params.n_iters, params.eta, params.dfw_mode, None) {
                Ok(report) => Ok(report.final_phi),
                Err(e) => {
                    log::warn!("representation update in epoch {k} failed ({e}); keeping the basis");
                    Ok(phi.clone())
                }
            }
        };

        if params.order == UpdateOrder::RepresentationFirst {
            phi = update(&phi)?;
        }
        let phi_k = &phi;
        let fits: Vec<Option<(f64, bool)>> = agents
            .par_iter_mut()
            .zip(played.par_iter())
            .enumerate()
            .map(|(h, (state, p))| -> Result<Option<(f64, bool)>> {
                let Some((stats, _)) = &p.data else { return Ok(None) };
                let sys = &fleet.systems[h];
                let theta = ls_weights(phi_k, stats).map_err(|e| e.for_agent(h))?;
                let ab = vec_inv(&(phi_k.mat() * theta), dx)?;
                let gain = synthesize(&ab, fleet, h, k);
                let fallback = gain.is_none();
                state.gain = gain.unwrap_or_else(|| fleet.k0[h].clone());
                Ok(Some(((&ab - sys.stacked()).norm(), fallback)))
            })
            .collect::<Result<Vec<_>>>()?;
        let errs: Vec<f64> = fits.iter().flatten().map(|f| f.0).collect();
        fallbacks += fits.iter().flatten().filter(|f| f.1).count();
        diagnostics.push(EpochDiagnostics {
            k,
            tau_k,
            sigma_k_sq: sigma_sq,
            subspace_distance: subspace_distance(phi_star, &phi)?,
            mean_param_err: if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 },
            aborts: agents.iter().filter(|a| a.aborted).count(),
        });
        if params.order == UpdateOrder::WeightsFirst && k < es.k_fin {
            phi = update(&phi)?;
        }
    }

    Ok(MultitaskOutcome {
        ledger,
        diagnostics,
        next_gains: agents.into_iter().map(|a| a.gain).collect(),
        final_phi: phi,
        fallbacks,
    })
}

/// Single-agent certainty equivalence on agent `agent` of `fleet`: the same
/// epochs, aborts and exploration (evaluated at `H = 1`, `d_theta = p`), with
/// unstructured least squares on the whole epoch. Uses the same random
/// streams as the agent's run inside [`run_multitask`].
pub fn run_singletask_baseline(
    fleet: &Fleet,
    agent: usize,
    es: &EpochSchedule,
    xs: &ExplorationSchedule,
    params: &LoopParams,
    rng: &RandomStream,
) -> Result<RegretLedger> {
    check_setup(fleet, params.x_b, params.k_b)?;
    if agent >= fleet.len() {
        return Err(Error::Setup(format!("agent {agent} is outside a fleet of {}", fleet.len())));
    }
    let (dx, du) = (fleet.dx(), fleet.du());
    let sys = &fleet.systems[agent];
    let k0 = &fleet.k0[agent];
    let bounds = AbortBounds { x_b: params.x_b, k_b: params.k_b, horizon: es.horizon() };
    let noise = NoiseModel::gaussian(&fleet.cost.w_cov);
    let (_, k_star) = lqr(sys, &fleet.cost).map_err(|e| e.for_agent(agent))?;
    let mut ledger = RegretLedger::new(vec![avg_cost(sys, &fleet.cost, &k_star)?]);
    let mut state = AgentState { gain: k0.clone(), x: Vector::zeros(dx), aborted: false };
    for k in 1..=es.k_fin {
        let sigma_sq = sigma_schedule(xs, k, es.boundary(k), 1, dx * (dx + du), du);
        let mut stream = rng.fork(&[agent as u64, k as u64]);
        let (traj, usable) = play_epoch(sys, k0, &mut state, sigma_sq.sqrt(), es.epoch(k).len(), &noise, &bounds, &mut stream)
            .map_err(|e| e.for_agent(agent))?;
        ledger.record_stage_costs(0, &stage_costs(&traj, &fleet.cost))?;
        if usable {
            let ab = full_ls(&CovStats::from_trajectory(&traj)?);
            state.gain = synthesize(&ab, fleet, agent, k).unwrap_or_else(|| k0.clone());
        }
    }
    Ok(ledger)
}

/// Diagnostics stream with header `k,tau_k,sigma_k_sq,subspace_distance,mean_param_err,aborts`.
pub fn write_diagnostics<W: Write>(diags: &[EpochDiagnostics], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "k,tau_k,sigma_k_sq,subspace_distance,mean_param_err,aborts")?;
    for d in diags {
        writeln!(
            out,
            "{},{},{:.8e},{:.8e},{:.8e},{}",
            d.k, d.tau_k, d.sigma_k_sq, d.subspace_distance, d.mean_param_err, d.aborts
        )?;
    }
    Ok(())
}

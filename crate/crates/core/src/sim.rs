//! Closed-loop rollouts with exploratory input, abort monitoring, stage
//! costs and regret bookkeeping.

use std::io::Write;

use crate::error::{Error, Result};
use crate::lqr::{CostParams, StateSpace};
use crate::matkit::{psd_sqrt, spectral_norm, Mat, Vector};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `len + 1` states.
    pub states: Vec<Vector>,
    /// `len` inputs.
    pub inputs: Vec<Vector>,
}

impl Trajectory {
    pub fn new(x0: Vector) -> Self {
        Self { states: vec![x0], inputs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn last_state(&self) -> &Vector {
        self.states.last().expect("trajectory always holds its initial state")
    }

    /// `z_t = [x_t; u_t]`.
    pub fn regressor(&self, t: usize) -> Vector {
        let (x, u) = (&self.states[t], &self.inputs[t]);
        let mut z = Vector::zeros(x.len() + u.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), u.len()).copy_from(u);
        z
    }

    /// Steps `range` as a trajectory of their own.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            states: self.states[range.start..=range.end].to_vec(),
            inputs: self.inputs[range].to_vec(),
        }
    }

    /// Appends `other`, whose first state must be this trajectory's last.
    pub fn extend(&mut self, other: &Trajectory) {
        debug_assert_eq!(self.last_state(), &other.states[0]);
        self.states.extend(other.states[1..].iter().cloned());
        self.inputs.extend(other.inputs.iter().cloned());
    }
}

/// Process-noise distribution.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    None,
    /// `w = L g` with `L L^T` the covariance.
    Gaussian { factor: Mat },
}

impl NoiseModel {
    pub fn gaussian(cov: &Mat) -> Self {
        NoiseModel::Gaussian { factor: psd_sqrt(cov) }
    }

    fn sample(&self, dx: usize, rng: &mut RandomStream) -> Vector {
        match self {
            NoiseModel::None => Vector::zeros(dx),
            NoiseModel::Gaussian { factor } => {
                let g = Vector::from_fn(factor.ncols(), |_, _| rng.normal());
                factor * g
            }
        }
    }
}

/// Abort thresholds: stop once `|x_t|^2 >= x_b^2 log T` or `|K| >= K_b`.
#[derive(Debug, Clone, Copy)]
pub struct AbortBounds {
    pub x_b: f64,
    pub k_b: f64,
    pub horizon: usize,
}

impl AbortBounds {
    pub fn state_limit_sq(&self) -> f64 {
        self.x_b * self.x_b * (self.horizon as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    StateBound,
    GainBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AbortState {
    /// Step index (relative to the rollout start) at which the check fired.
    pub abort_time: Option<usize>,
    pub reason: Option<AbortReason>,
}

impl AbortState {
    pub fn aborted(&self) -> bool {
        self.abort_time.is_some()
    }
}

/// Simulates `x+ = A x + B u + w` with `u = K x + sigma_u g` for up to
/// `steps` steps. Bounds are checked before each input is applied; when one
/// fires the trajectory ends at that state.
///
/// Every step draws the exploration vector even when `sigma_u = 0`, so two
/// rollouts sharing a stream see the same disturbances.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    sys: &StateSpace,
    k: &Mat,
    sigma_u: f64,
    steps: usize,
    x_init: &Vector,
    noise: &NoiseModel,
    bounds: Option<&AbortBounds>,
    rng: &mut RandomStream,
) -> Result<(Trajectory, AbortState)> {
    let (dx, du) = (sys.dx(), sys.du());
    if k.shape() != (du, dx) || x_init.len() != dx {
        return Err(Error::Dimension("gain or initial state does not match the system".into()));
    }
    if sigma_u > 1.0 {
        log::warn!("exploration scale {sigma_u} exceeds 1");
    }
    let mut traj = Trajectory::new(x_init.clone());
    traj.states.reserve(steps);
    traj.inputs.reserve(steps);
    let gain_norm = bounds.map(|_| spectral_norm(k)).unwrap_or(0.0);
    let mut x = x_init.clone();
    for t in 0..steps {
        if let Some(b) = bounds {
            let reason = if x.norm_squared() >= b.state_limit_sq() {
                Some(AbortReason::StateBound)
            } else if gain_norm >= b.k_b {
                Some(AbortReason::GainBound)
            } else {
                None
            };
            if reason.is_some() {
                return Ok((traj, AbortState { abort_time: Some(t), reason }));
            }
        }
        let g = Vector::from_fn(du, |_, _| rng.normal());
        let u = k * &x + g * sigma_u;
        let w = noise.sample(dx, rng);
        let next = &sys.a * &x + &sys.b * &u + w;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericBlowup { step: t + 1 });
        }
        traj.inputs.push(u);
        traj.states.push(next.clone());
        x = next;
    }
    Ok((traj, AbortState::default()))
}

/// `x_t^T Q x_t + u_t^T R u_t` for each step.
pub fn stage_costs(traj: &Trajectory, cost: &CostParams) -> Vec<f64> {
    (0..traj.len())
        .map(|t| {
            let (x, u) = (&traj.states[t], &traj.inputs[t]);
            x.dot(&(&cost.q * x)) + u.dot(&(&cost.r * u))
        })
        .collect()
}

pub fn accumulate_cost(traj: &Trajectory, cost: &CostParams) -> f64 {
    stage_costs(traj, cost).iter().sum()
}

/// Cumulative cost and regret samples per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub j_star: Vec<f64>,
    pub cum_cost: Vec<f64>,
    /// `(t, cum_cost(t) - t * j_star)` per agent.
    pub samples: Vec<Vec<(usize, f64)>>,
}

impl RegretLedger {
    pub fn new(j_star: Vec<f64>) -> Self {
        let n = j_star.len();
        Self { j_star, cum_cost: vec![0.0; n], samples: vec![Vec::new(); n] }
    }

    pub fn agents(&self) -> usize {
        self.j_star.len()
    }

    pub fn record_regret(&mut self, agent: usize, t: usize, cum_cost: f64) -> Result<()> {
        let samples = &mut self.samples[agent];
        if let Some(&(last, _)) = samples.last() {
            if t < last {
                return Err(Error::Ordering { t, last });
            }
        }
        samples.push((t, cum_cost - t as f64 * self.j_star[agent]));
        self.cum_cost[agent] = cum_cost;
        Ok(())
    }

    /// Records one sample per stage cost, continuing from the last time.
    pub fn record_stage_costs(&mut self, agent: usize, costs: &[f64]) -> Result<()> {
        let mut t = self.samples[agent].last().map(|s| s.0).unwrap_or(0);
        let mut total = self.cum_cost[agent];
        self.samples[agent].reserve(costs.len());
        for c in costs {
            t += 1;
            total += c;
            self.record_regret(agent, t, total)?;
        }
        Ok(())
    }

    pub fn steps(&self, agent: usize) -> usize {
        self.samples[agent].last().map(|s| s.0).unwrap_or(0)
    }

    /// Regret after `t` steps, assuming one sample per step.
    pub fn regret_at(&self, agent: usize, t: usize) -> Option<f64> {
        let s = self.samples[agent].get(t.checked_sub(1)?)?;
        (s.0 == t).then_some(s.1)
    }
}

/// One row per step: `t x_1 .. x_n u_1 .. u_m`.
pub fn write_trajectory<W: Write>(traj: &Trajectory, out: &mut W) -> std::io::Result<()> {
    for t in 0..traj.len() {
        let mut row = vec![t.to_string()];
        row.extend(traj.states[t].iter().map(|v| format!("{v:.9e}")));
        row.extend(traj.inputs[t].iter().map(|v| format!("{v:.9e}")));
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::{avg_cost, dlyap_solve, lqr_gain};

    fn scalar(a: f64, b: f64) -> StateSpace {
        StateSpace::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, b)).unwrap()
    }

    #[test]
    fn homogeneous_rollout_stays_at_zero() {
        let sys = StateSpace::new(Mat::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 1.1]), Mat::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let k = Mat::from_row_slice(1, 2, &[-0.1, -0.5]);
        let mut rng = RandomStream::new(1);
        let (traj, abort) = rollout(&sys, &k, 0.0, 50, &Vector::zeros(2), &NoiseModel::None, None, &mut rng).unwrap();
        assert!(!abort.aborted());
        assert_eq!(traj.len(), 50);
        assert_eq!(traj.states.len(), 51);
        assert!(traj.states.iter().chain(&traj.inputs).all(|v| v.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn state_bound_abort_matches_doubling_growth() {
        let sys = scalar(2.0, 0.0);
        let bounds = AbortBounds { x_b: 3.0, k_b: 10.0, horizon: 100 };
        let limit = bounds.state_limit_sq();
        // x_t = 2^t, so the first t with 4^t >= limit
        let expected = (0..).find(|&t| 4f64.powi(t) >= limit).unwrap() as usize;
        let mut rng = RandomStream::new(2);
        let (traj, abort) = rollout(&sys, &Mat::zeros(1, 1), 0.0, 100, &Vector::from_element(1, 1.0), &NoiseModel::None, Some(&bounds), &mut rng).unwrap();
        assert_eq!(abort.abort_time, Some(expected));
        assert_eq!(abort.reason, Some(AbortReason::StateBound));
        assert_eq!(traj.len(), expected);
        assert_eq!(traj.states.len(), expected + 1);
        assert_eq!(traj.last_state()[0], 2f64.powi(expected as i32));
    }

    #[test]
    fn gain_bound_aborts_immediately() {
        let sys = scalar(0.5, 1.0);
        let bounds = AbortBounds { x_b: 100.0, k_b: 2.0, horizon: 100 };
        let mut rng = RandomStream::new(3);
        let (traj, abort) = rollout(&sys, &Mat::from_element(1, 1, -2.5), 0.1, 10, &Vector::zeros(1), &NoiseModel::gaussian(&Mat::identity(1, 1)), Some(&bounds), &mut rng).unwrap();
        assert_eq!(abort.abort_time, Some(0));
        assert_eq!(abort.reason, Some(AbortReason::GainBound));
        assert!(traj.is_empty());
    }

    #[test]
    fn blowup_is_an_error_not_an_abort() {
        let sys = scalar(1e200, 0.0);
        let mut rng = RandomStream::new(4);
        let r = rollout(&sys, &Mat::zeros(1, 1), 0.0, 10, &Vector::from_element(1, 1e200), &NoiseModel::None, None, &mut rng);
        assert!(matches!(r, Err(Error::NumericBlowup { step: 1 })));
    }

    #[test]
    fn rollouts_are_deterministic() {
        let sys = scalar(0.7, 1.0);
        let noise = NoiseModel::gaussian(&Mat::identity(1, 1));
        let run = || {
            let mut rng = RandomStream::new(99).fork(&[1, 2]);
            rollout(&sys, &Mat::from_element(1, 1, -0.2), 0.5, 200, &Vector::zeros(1), &noise, None, &mut rng).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cost_examples() {
        let cost = CostParams::standard(2, 1, 1.0);
        let mut traj = Trajectory::new(Vector::from_vec(vec![1.0, 0.0]));
        traj.inputs.push(Vector::from_vec(vec![2.0]));
        traj.states.push(Vector::zeros(2));
        assert_eq!(accumulate_cost(&traj, &cost), 5.0);
        let zero = Trajectory { states: vec![Vector::zeros(2); 4], inputs: vec![Vector::zeros(1); 3] };
        assert_eq!(accumulate_cost(&zero, &cost), 0.0);
    }

    #[test]
    fn ledger_examples() {
        let mut ledger = RegretLedger::new(vec![2.0, 0.0]);
        ledger.record_regret(0, 5, 10.0).unwrap();
        assert_eq!(ledger.samples[0][0], (5, 0.0));
        ledger.record_regret(1, 5, 7.5).unwrap();
        assert_eq!(ledger.samples[1][0], (5, 7.5));
        assert!(matches!(ledger.record_regret(0, 4, 12.0), Err(Error::Ordering { t: 4, last: 5 })));
    }

    #[test]
    fn ledger_stage_costs_accumulate() {
        let mut ledger = RegretLedger::new(vec![1.0]);
        ledger.record_stage_costs(0, &[1.0, 3.0]).unwrap();
        ledger.record_stage_costs(0, &[0.5]).unwrap();
        assert_eq!(ledger.samples[0], vec![(1, 0.0), (2, 2.0), (3, 1.5)]);
        assert_eq!(ledger.regret_at(0, 2), Some(2.0));
        assert_eq!(ledger.steps(0), 3);
    }

    #[test]
    fn stationary_covariance_matches_lyapunov() {
        let sys = StateSpace::new(Mat::from_row_slice(2, 2, &[0.8, 0.3, -0.2, 0.5]), Mat::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let k = Mat::from_row_slice(1, 2, &[0.1, -0.2]);
        let w = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let mut rng = RandomStream::new(5);
        let (traj, _) = rollout(&sys, &k, 0.0, 100_000, &Vector::zeros(2), &NoiseModel::gaussian(&w), None, &mut rng).unwrap();
        let mut emp = Mat::zeros(2, 2);
        for x in &traj.states[1000..] {
            emp += x * x.transpose();
        }
        emp /= (traj.states.len() - 1000) as f64;
        // stationary covariance S = A_cl S A_cl^T + W
        let want = dlyap_solve(&sys.closed_loop(&k).transpose(), &w).unwrap();
        assert!((&emp - &want).norm() / want.norm() < 0.1);
    }

    #[test]
    fn optimal_controller_regret_has_no_drift() {
        let sys = StateSpace::new(Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]), Mat::from_column_slice(2, 1, &[0.0, 0.2])).unwrap();
        let cost = CostParams::standard(2, 1, 1.0);
        let k = lqr_gain(&sys, &cost).unwrap();
        let j = avg_cost(&sys, &cost, &k).unwrap();
        let noise = NoiseModel::gaussian(&cost.w_cov);
        let root = RandomStream::new(6);
        let horizon = 2000;
        let finals: Vec<f64> = (0..50)
            .map(|s| {
                let mut rng = root.fork(&[s]);
                let (traj, _) = rollout(&sys, &k, 0.0, horizon, &Vector::zeros(2), &noise, None, &mut rng).unwrap();
                accumulate_cost(&traj, &cost) - horizon as f64 * j
            })
            .collect();
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let se = (finals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        // Starting from zero the transient is a bounded negative offset; no linear drift.
        assert!(mean.abs() < 0.05 * horizon as f64 * j, "mean regret {mean}");
        assert!(mean + 3.0 * se > -(dlyap_solve(&sys.closed_loop(&k), &(Mat::identity(2, 2) + k.transpose() * &k)).unwrap().trace() * 20.0));
    }
}

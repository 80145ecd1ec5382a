//! Representation-constrained least squares and the federated
//! De-bias & Feature Whiten (DFW) representation update.
//!
//! Everything consumes sufficient statistics `sum z z^T` and `sum z x+^T`
//! with `z = [x; u]`. The `p x p` matrices `sum (z z^T kron I)` never get
//! formed: with `M = vec_inv(v)` we have `(S kron I) vec(M) = vec(M S)`, so
//! every product reduces to `d_x x (d_x + d_u)` blocks.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matkit::{lambda_max, pinv, subspace_distance, thin_qr, vec, vec_inv, Mat, OrthoBasis, Vector, PINV_REL_TOL};
use crate::sim::Trajectory;

/// Smallest admissible `lambda_min / lambda_max` of a gradient-batch covariance.
pub const EXCITATION_REL_TOL: f64 = 1e-12;

/// `z_cov = sum z_s z_s^T`, `cross = sum z_s x_{s+1}^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovStats {
    pub z_cov: Mat,
    pub cross: Mat,
    pub count: usize,
}

impl CovStats {
    pub fn zeros(dx: usize, du: usize) -> Self {
        let n = dx + du;
        Self { z_cov: Mat::zeros(n, n), cross: Mat::zeros(n, dx), count: 0 }
    }

    pub fn push(&mut self, z: &Vector, x_next: &Vector) {
        self.z_cov.ger(1.0, z, z, 1.0);
        self.cross.ger(1.0, z, x_next, 1.0);
        self.count += 1;
    }

    /// Statistics of steps `range` of `traj`.
    pub fn from_steps(traj: &Trajectory, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > traj.len() {
            return Err(Error::DataBudget(format!(
                "steps {range:?} not available in a trajectory of length {}",
                traj.len()
            )));
        }
        let dx = traj.states[0].len();
        let du = traj.inputs[0].len();
        let mut stats = Self::zeros(dx, du);
        for t in range {
            stats.push(&traj.regressor(t), &traj.states[t + 1]);
        }
        Ok(stats)
    }

    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        Self::from_steps(traj, 0..traj.len())
    }

    pub fn dx(&self) -> usize {
        self.cross.ncols()
    }

    pub fn merge(&mut self, other: &CovStats) {
        self.z_cov += &other.z_cov;
        self.cross += &other.cross;
        self.count += other.count;
    }

    /// Whether `z_cov` is numerically positive definite.
    pub fn is_excited(&self) -> bool {
        self.check_excited().is_ok()
    }

    fn check_excited(&self) -> Result<()> {
        let eig = self.z_cov.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= EXCITATION_REL_TOL * hi {
            return Err(Error::Excitation(format!(
                "regressor covariance is singular (eigenvalues {lo:.3e} .. {hi:.3e})"
            )));
        }
        Ok(())
    }

    /// `cross^T z_cov^{-1}`, the unconstrained fit `[A B]`; requires an
    /// excited batch.
    fn whitened_fit(&self) -> Result<Mat> {
        self.check_excited()?;
        let chol = self
            .z_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Excitation("regressor covariance is not positive definite".into()))?;
        Ok(chol.solve(&self.cross).transpose())
    }
}

fn basis_blocks(phi: &OrthoBasis, dx: usize) -> Result<Vec<Mat>> {
    phi.mat().column_iter().map(|c| vec_inv(&c.into_owned(), dx)).collect()
}

fn check_shapes(phi: &OrthoBasis, stats: &CovStats) -> Result<()> {
    let dx = stats.dx();
    let n = stats.z_cov.nrows();
    if phi.ambient_dim() != dx * n {
        return Err(Error::Dimension(format!(
            "basis of dimension {} does not match d_x = {dx}, d_x + d_u = {n}",
            phi.ambient_dim()
        )));
    }
    Ok(())
}

fn ls_from_blocks(blocks: &[Mat], stats: &CovStats) -> Vector {
    let d = blocks.len();
    let cross_t = stats.cross.transpose();
    let weighted: Vec<Mat> = blocks.iter().map(|m| m * &stats.z_cov).collect();
    let mut lambda = Mat::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let v = blocks[a].dot(&weighted[b]);
            lambda[(a, b)] = v;
            lambda[(b, a)] = v;
        }
    }
    let rhs = Vector::from_iterator(d, blocks.iter().map(|m| m.dot(&cross_t)));
    pinv(&lambda, PINV_REL_TOL) * rhs
}

/// Least-squares weights with the representation held fixed:
/// `theta = Lambda^+ sum Phi^T (z kron I) x+`, `Lambda = sum Phi^T (z z^T kron I) Phi`.
pub fn ls_weights(phi: &OrthoBasis, stats: &CovStats) -> Result<Vector> {
    check_shapes(phi, stats)?;
    Ok(ls_from_blocks(&basis_blocks(phi, stats.dx())?, stats))
}

/// Unstructured least squares `[A B] = cross^T z_cov^+`.
pub fn full_ls(stats: &CovStats) -> Mat {
    stats.cross.transpose() * pinv(&stats.z_cov, PINV_REL_TOL)
}

fn combine(blocks: &[Mat], theta: &Vector) -> Mat {
    let mut m = Mat::zeros(blocks[0].nrows(), blocks[0].ncols());
    for (b, &t) in blocks.iter().zip(theta.iter()) {
        m += b * t;
    }
    m
}

/// Gradient of `1/2 sum |x+ - vec_inv(Phi theta) z|^2` with respect to `Phi`,
/// without preconditioning.
pub fn raw_gradient(phi: &OrthoBasis, theta: &Vector, stats: &CovStats) -> Result<Mat> {
    check_shapes(phi, stats)?;
    let model = combine(&basis_blocks(phi, stats.dx())?, theta);
    let resid = model * &stats.z_cov - stats.cross.transpose();
    Ok(vec(&resid) * theta.transpose())
}

/// Gradient preconditioned by the inverse regressor covariance
/// `(z_cov kron I)^{-1} = z_cov^{-1} kron I`, which collapses to
/// `vec(vec_inv(Phi theta) - [A B]_ls) theta^T`.
pub fn dfw_gradient(phi: &OrthoBasis, theta: &Vector, stats: &CovStats) -> Result<Mat> {
    check_shapes(phi, stats)?;
    if theta.len() != phi.dim() {
        return Err(Error::Dimension(format!("theta has length {}, basis has {} columns", theta.len(), phi.dim())));
    }
    let fit = stats.whitened_fit()?;
    let model = combine(&basis_blocks(phi, stats.dx())?, theta);
    Ok(vec(&(model - fit)) * theta.transpose())
}

/// One agent's data for a DFW round: the batch used for its weights and the
/// batch used for its gradient.
#[derive(Debug, Clone)]
pub struct AgentBatch {
    pub ls: CovStats,
    pub grad: CovStats,
}

struct Prepared {
    ls: CovStats,
    fit: Mat,
}

fn prepare(agents: &[AgentBatch]) -> Result<Vec<Prepared>> {
    agents
        .par_iter()
        .enumerate()
        .map(|(h, a)| {
            let fit = a.grad.whitened_fit().map_err(|e| e.for_agent(h))?;
            Ok(Prepared { ls: a.ls.clone(), fit })
        })
        .collect()
}

fn round_prepared(phi: &OrthoBasis, agents: &[Prepared], eta: f64) -> Result<OrthoBasis> {
    let dx = agents[0].ls.dx();
    let blocks = basis_blocks(phi, dx)?;
    let steps: Vec<Mat> = agents
        .par_iter()
        .map(|a| {
            let theta = ls_from_blocks(&blocks, &a.ls);
            let resid = combine(&blocks, &theta) - &a.fit;
            vec(&resid) * theta.transpose()
        })
        .collect();
    // Fixed agent order keeps the average bit-identical across thread counts.
    let mut total = Mat::zeros(phi.ambient_dim(), phi.dim());
    for s in &steps {
        total += s;
    }
    let averaged = phi.mat() - total * (eta / agents.len() as f64);
    thin_qr(&averaged).map(|(q, _)| q)
}

/// One DFW round: every agent fits weights on its `ls` batch, takes a
/// preconditioned step on its `grad` batch, and the averaged result is
/// re-orthonormalized.
pub fn dfw_round(phi: &OrthoBasis, agents: &[AgentBatch], eta: f64) -> Result<OrthoBasis> {
    if agents.is_empty() {
        return Err(Error::Setup("DFW round needs at least one agent".into()));
    }
    if !(eta >= 0.0) {
        return Err(Error::Setup(format!("step size must be non-negative, got {eta}")));
    }
    for a in agents {
        check_shapes(phi, &a.ls)?;
        check_shapes(phi, &a.grad)?;
    }
    round_prepared(phi, &prepare(agents)?, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfwMode {
    /// Disjoint sub-trajectories per iteration.
    Split,
    /// All data for weights and gradient on every iteration.
    FullData,
    /// First half of each trajectory for weights, second half for the
    /// gradient, both reused on every iteration.
    Halves,
}

#[derive(Debug, Clone)]
pub struct DfwReport {
    /// Subspace distance to the reference basis before the first and after
    /// every iteration; empty without a reference.
    pub iterates: Vec<f64>,
    pub final_phi: OrthoBasis,
    pub mode: DfwMode,
}

impl DfwReport {
    /// Per-iteration ratios `d_{n+1} / d_n`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.iterates.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Runs `n_iters` DFW rounds from `phi0` on per-agent trajectories.
pub fn dfw_run(
    phi0: &OrthoBasis,
    data: &[Trajectory],
    n_iters: usize,
    eta: f64,
    mode: DfwMode,
    phi_star: Option<&OrthoBasis>,
) -> Result<DfwReport> {
    if n_iters == 0 || data.is_empty() {
        return Err(Error::Setup("DFW needs at least one iteration and one agent".into()));
    }
    let track = |phi: &OrthoBasis, out: &mut Vec<f64>| -> Result<()> {
        if let Some(star) = phi_star {
            out.push(subspace_distance(star, phi)?);
        }
        Ok(())
    };
    let mut iterates = Vec::new();
    track(phi0, &mut iterates)?;
    let mut phi = phi0.clone();
    match mode {
        DfwMode::FullData | DfwMode::Halves => {
            let batches = data
                .iter()
                .enumerate()
                .map(|(h, traj)| {
                    if mode == DfwMode::FullData {
                        let stats = CovStats::from_trajectory(traj).map_err(|e| e.for_agent(h))?;
                        return Ok(AgentBatch { ls: stats.clone(), grad: stats });
                    }
                    let mid = traj.len() / 2;
                    Ok(AgentBatch {
                        ls: CovStats::from_steps(traj, 0..mid).map_err(|e| e.for_agent(h))?,
                        grad: CovStats::from_steps(traj, mid..traj.len()).map_err(|e| e.for_agent(h))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            for a in &batches {
                check_shapes(phi0, &a.ls)?;
            }
            let prepared = prepare(&batches)?;
            for _ in 0..n_iters {
                phi = round_prepared(&phi, &prepared, eta)?;
                track(&phi, &mut iterates)?;
            }
        }
        DfwMode::Split => {
            let halves: Vec<usize> = data.iter().map(|t| t.len() / (2 * n_iters)).collect();
            if let Some(h) = halves.iter().position(|&t1| t1 == 0) {
                return Err(Error::DataBudget(format!(
                    "agent {h} has {} steps, split mode needs at least {} for {n_iters} iterations",
                    data[h].len(),
                    2 * n_iters
                )));
            }
            for n in 0..n_iters {
                let batches = data
                    .iter()
                    .zip(&halves)
                    .map(|(traj, &t1)| {
                        let start = n * 2 * t1;
                        Ok(AgentBatch {
                            ls: CovStats::from_steps(traj, start..start + t1)?,
                            grad: CovStats::from_steps(traj, start + t1..start + 2 * t1)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if n == 0 {
                    for a in &batches {
                        check_shapes(phi0, &a.ls)?;
                    }
                }
                phi = round_prepared(&phi, &prepare(&batches)?, eta)?;
                track(&phi, &mut iterates)?;
            }
        }
    }
    Ok(DfwReport { iterates, final_phi: phi, mode })
}

/// Conservative step size `0.956 / lambda_max(H^{-1} sum theta theta^T)`.
pub fn theory_step_size(thetas: &[Vector]) -> f64 {
    let d = thetas[0].len();
    let gram = thetas.iter().fold(Mat::zeros(d, d), |acc, t| acc + t * t.transpose()) / thetas.len() as f64;
    0.956 / lambda_max(&gram)
}

/// `n,subspace_distance` per recorded iterate.
pub fn write_dfw_report<W: Write>(report: &DfwReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "n,subspace_distance")?;
    for (n, d) in report.iterates.iter().enumerate() {
        writeln!(out, "{n},{d:.9e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::build_synthetic_fleet;
    use crate::lqr::StateSpace;
    use crate::matkit::{max_abs, perturbed_basis};
    use crate::rng::RandomStream;
    use crate::sim::{rollout, NoiseModel};
    use proptest::prelude::*;

    fn random_stats(rng: &mut RandomStream, dx: usize, du: usize, samples: usize) -> (CovStats, Vec<(Vector, Vector)>) {
        let mut stats = CovStats::zeros(dx, du);
        let mut pairs = Vec::new();
        for _ in 0..samples {
            let z = Vector::from_fn(dx + du, |_, _| rng.normal());
            let x = Vector::from_fn(dx, |_, _| rng.normal());
            stats.push(&z, &x);
            pairs.push((z, x));
        }
        (stats, pairs)
    }

    fn noiseless_data(sys: &StateSpace, rng: &mut RandomStream, steps: usize) -> Trajectory {
        let k = Mat::zeros(sys.du(), sys.dx());
        let x0 = Vector::from_fn(sys.dx(), |_, _| rng.normal());
        rollout(sys, &k, 1.0, steps, &x0, &NoiseModel::None, None, rng).unwrap().0
    }

    #[test]
    fn identity_basis_matches_normal_equations() {
        let mut rng = RandomStream::new(1);
        for _ in 0..10 {
            let (stats, pairs) = random_stats(&mut rng, 3, 2, 40);
            let phi = OrthoBasis::identity(15, 15).unwrap();
            let theta = ls_weights(&phi, &stats).unwrap();
            let structured = vec_inv(&theta, 3).unwrap();
            let mut xz = Mat::zeros(3, 5);
            let mut zz = Mat::zeros(5, 5);
            for (z, x) in &pairs {
                xz += x * z.transpose();
                zz += z * z.transpose();
            }
            let brute = xz * pinv(&zz, 1e-12);
            assert!(max_abs(&(&structured - &brute)) < 1e-8);
            assert!(max_abs(&(&structured - full_ls(&stats))) < 1e-10);
        }
    }

    #[test]
    fn structured_ls_recovers_weights_from_clean_data() {
        let fleet = build_synthetic_fleet(3, 2, 4, 6, 0.2, &RandomStream::new(2)).unwrap();
        let mut rng = RandomStream::new(3);
        for (h, sys) in fleet.systems.iter().enumerate() {
            let traj = noiseless_data(sys, &mut rng, 30);
            let theta = ls_weights(&fleet.basis.phi, &CovStats::from_trajectory(&traj).unwrap()).unwrap();
            assert!((theta - &fleet.basis.thetas[h]).amax() < 1e-8);
        }
    }

    #[test]
    fn zero_regressors_give_zero_weights() {
        let mut stats = CovStats::zeros(2, 1);
        stats.push(&Vector::zeros(3), &Vector::from_vec(vec![1.0, 2.0]));
        let phi = OrthoBasis::identity(6, 2).unwrap();
        assert_eq!(ls_weights(&phi, &stats).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn rank_one_full_ls() {
        let mut stats = CovStats::zeros(2, 1);
        stats.push(&Vector::from_vec(vec![1.0, 0.0, 0.0]), &Vector::from_vec(vec![3.0, -4.0]));
        let ab = full_ls(&stats);
        assert_eq!(ab, Mat::from_row_slice(2, 3, &[3.0, 0.0, 0.0, -4.0, 0.0, 0.0]));
    }

    #[test]
    fn gradient_vanishes_at_truth() {
        let fleet = build_synthetic_fleet(3, 1, 3, 4, 0.2, &RandomStream::new(4)).unwrap();
        let mut rng = RandomStream::new(5);
        let traj = noiseless_data(&fleet.systems[0], &mut rng, 40);
        let stats = CovStats::from_trajectory(&traj).unwrap();
        let g = dfw_gradient(&fleet.basis.phi, &fleet.basis.thetas[0], &stats).unwrap();
        assert!(max_abs(&g) < 1e-10);
    }

    #[test]
    fn preconditioned_gradient_is_model_error_times_weights() {
        let fleet = build_synthetic_fleet(3, 2, 3, 4, 0.2, &RandomStream::new(6)).unwrap();
        let mut rng = RandomStream::new(7);
        let traj = noiseless_data(&fleet.systems[1], &mut rng, 60);
        let stats = CovStats::from_trajectory(&traj).unwrap();
        let phi = perturbed_basis(&fleet.basis.phi, 0.3, &mut rng).unwrap();
        let theta = ls_weights(&phi, &stats).unwrap();
        let g = dfw_gradient(&phi, &theta, &stats).unwrap();
        let truth = fleet.basis.phi.mat() * &fleet.basis.thetas[1];
        let want = (phi.mat() * &theta - truth) * theta.transpose();
        assert!(max_abs(&(g - want)) < 1e-8);
    }

    #[test]
    fn singular_gradient_batch_is_an_excitation_error() {
        let mut stats = CovStats::zeros(2, 1);
        for _ in 0..5 {
            stats.push(&Vector::from_vec(vec![1.0, 1.0, 0.0]), &Vector::from_vec(vec![0.0, 1.0]));
        }
        let phi = OrthoBasis::identity(6, 2).unwrap();
        let r = dfw_gradient(&phi, &Vector::from_vec(vec![1.0, 0.0]), &stats);
        assert!(matches!(r, Err(Error::Excitation(_))));
    }

    #[test]
    fn round_with_zero_step_or_identical_agents() {
        let mut rng = RandomStream::new(8);
        let (stats, _) = random_stats(&mut rng, 2, 1, 30);
        let phi = perturbed_basis(&OrthoBasis::identity(6, 2).unwrap(), 0.4, &mut rng).unwrap();
        let batch = AgentBatch { ls: stats.clone(), grad: stats };
        let same = dfw_round(&phi, std::slice::from_ref(&batch), 0.0).unwrap();
        assert!(max_abs(&(same.mat() - phi.mat())) < 1e-12);
        let one = dfw_round(&phi, std::slice::from_ref(&batch), 0.25).unwrap();
        let many = dfw_round(&phi, &vec![batch; 5], 0.25).unwrap();
        assert!(max_abs(&(one.mat() - many.mat())) < 1e-12);
    }

    #[test]
    fn split_mode_needs_enough_data() {
        let fleet = build_synthetic_fleet(2, 1, 2, 3, 0.2, &RandomStream::new(9)).unwrap();
        let mut rng = RandomStream::new(10);
        let data: Vec<_> = fleet.systems.iter().map(|s| noiseless_data(s, &mut rng, 15)).collect();
        let r = dfw_run(&fleet.basis.phi, &data, 8, 0.25, DfwMode::Split, None);
        assert!(matches!(r, Err(Error::DataBudget(_))));
        assert!(dfw_run(&fleet.basis.phi, &data, 8, 0.25, DfwMode::FullData, None).is_ok());
    }

    #[test]
    fn single_iteration_run_is_one_round() {
        let fleet = build_synthetic_fleet(2, 1, 2, 3, 0.2, &RandomStream::new(11)).unwrap();
        let mut rng = RandomStream::new(12);
        let data: Vec<_> = fleet.systems.iter().map(|s| noiseless_data(s, &mut rng, 20)).collect();
        let phi0 = perturbed_basis(&fleet.basis.phi, 0.5, &mut rng).unwrap();
        let report = dfw_run(&phi0, &data, 1, 0.25, DfwMode::FullData, Some(&fleet.basis.phi)).unwrap();
        let batches: Vec<_> = data
            .iter()
            .map(|t| {
                let s = CovStats::from_trajectory(t).unwrap();
                AgentBatch { ls: s.clone(), grad: s }
            })
            .collect();
        let round = dfw_round(&phi0, &batches, 0.25).unwrap();
        assert_eq!(report.final_phi, round);
        assert_eq!(report.iterates.len(), 2);
    }

    #[test]
    fn noiseless_rounds_contract() {
        let fleet = build_synthetic_fleet(3, 1, 3, 6, 0.2, &RandomStream::new(13)).unwrap();
        let mut rng = RandomStream::new(14);
        let data: Vec<_> = fleet.systems.iter().map(|s| noiseless_data(s, &mut rng, 50)).collect();
        let phi0 = perturbed_basis(&fleet.basis.phi, 0.3, &mut rng).unwrap();
        let eta = theory_step_size(&fleet.basis.thetas);
        let report = dfw_run(&phi0, &data, 30, eta, DfwMode::FullData, Some(&fleet.basis.phi)).unwrap();
        for w in report.iterates.windows(2) {
            assert!(w[1] < w[0], "{:?}", report.iterates);
        }
    }

    #[test]
    fn report_dump_has_one_line_per_iterate() {
        let report = DfwReport {
            iterates: vec![0.5, 0.25, 0.125],
            final_phi: OrthoBasis::identity(2, 1).unwrap(),
            mode: DfwMode::FullData,
        };
        let mut buf = Vec::new();
        write_dfw_report(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(report.contraction_ratios(), vec![0.5, 0.5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimators_ignore_sample_order(seed in 0u64..1000, rot in 1usize..29) {
            let mut rng = RandomStream::new(seed);
            let (_, mut pairs) = random_stats(&mut rng, 2, 1, 30);
            let phi = thin_qr(&Mat::from_fn(6, 3, |_, _| rng.normal())).unwrap().0;
            let build = |pairs: &[(Vector, Vector)]| {
                let mut s = CovStats::zeros(2, 1);
                for (z, x) in pairs { s.push(z, x); }
                s
            };
            let before = ls_weights(&phi, &build(&pairs)).unwrap();
            pairs.rotate_left(rot);
            pairs.reverse();
            let after = ls_weights(&phi, &build(&pairs)).unwrap();
            prop_assert!((before - after).amax() < 1e-9);
        }
    }
}

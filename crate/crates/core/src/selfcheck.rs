//! Fast invariant and oracle checks runnable from an installed binary.
//!
//! Each check builds its own oracle from first principles (closed forms,
//! dense normal equations, finite differences) rather than reusing the code
//! path it checks.

use crate::error::Result;
use crate::fleet::build_synthetic_fleet;
use crate::lqr::{avg_cost, dlyap_solve, lqr, spectral_radius, CostParams, StateSpace};
use crate::matkit::{perturbed_basis, subspace_distance, vec, Mat, OrthoBasis, Vector};
use crate::mtlearn::{dfw_run, ls_weights, raw_gradient, CovStats, DfwMode};
use crate::rng::RandomStream;
use crate::sim::{rollout, NoiseModel, Trajectory};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&mut RandomStream) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("dare_scalar_golden_ratio", dare_scalar),
    ("dare_dlyap_residuals", dare_residuals),
    ("ce_suboptimality_bound", ce_bound),
    ("ls_matches_normal_equations", ls_oracle),
    ("gradient_matches_finite_differences", gradient_fd),
    ("dfw_noiseless_contraction", dfw_contraction),
];

/// Runs every check with a fixed seed.
pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = RandomStream::new(0xC4EC).fork(&[i as u64]);
            match f(&mut rng) {
                Ok((passed, detail)) => CheckOutcome { name, passed, detail },
                Err(e) => CheckOutcome { name, passed: false, detail: format!("error: {e}") },
            }
        })
        .collect()
}

fn gauss(r: usize, c: usize, rng: &mut RandomStream) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.normal())
}

/// Random `(A, B)` with `rho(A)` drawn in `[0.5, 1.3]`.
pub(crate) fn random_system(dx: usize, du: usize, rng: &mut RandomStream) -> StateSpace {
    let mut a = gauss(dx, dx, rng);
    let rho = spectral_radius(&a).max(1e-9);
    a *= (0.5 + 0.8 * rng.open01()) / rho;
    StateSpace { a, b: gauss(dx, du, rng) }
}

fn dare_scalar(_: &mut RandomStream) -> Result<(bool, String)> {
    let one = Mat::from_element(1, 1, 1.0);
    let sys = StateSpace::new(one.clone(), one.clone())?;
    let (p, _) = lqr(&sys, &CostParams::new(one.clone(), one.clone(), one)?)?;
    let err = (p[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs();
    Ok((err < 1e-9, format!("|p - golden ratio| = {err:.2e}")))
}

fn dare_residuals(rng: &mut RandomStream) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dx = 1 + (rng.next_u64() % 6) as usize;
        let du = 1 + (rng.next_u64() % 3) as usize;
        let sys = random_system(dx, du, rng);
        let cost = CostParams::standard(dx, du, 1.0);
        let (p, k) = lqr(&sys, &cost)?;
        let (a, b) = (&sys.a, &sys.b);
        let btpa = b.transpose() * &p * a;
        let inner = (&cost.r + b.transpose() * &p * b).try_inverse().expect("R + B'PB is positive definite");
        let dare = a.transpose() * &p * a - btpa.transpose() * inner * &btpa + &cost.q - &p;
        let a_cl = sys.closed_loop(&k);
        let q_k = &cost.q + k.transpose() * &cost.r * &k;
        let pk = dlyap_solve(&a_cl, &q_k)?;
        let lyap = a_cl.transpose() * &pk * &a_cl + &q_k - &pk;
        worst = worst.max(dare.norm() / p.norm()).max(lyap.norm() / pk.norm());
    }
    Ok((worst < 1e-8, format!("worst relative residual {worst:.2e} over 200 systems")))
}

fn ce_bound(rng: &mut RandomStream) -> Result<(bool, String)> {
    let mut held = 0;
    let n = 50;
    for _ in 0..n {
        let sys = random_system(3, 2, rng);
        let cost = CostParams::standard(3, 2, 1.0);
        let (p, k_star) = lqr(&sys, &cost)?;
        let p_norm = p.symmetric_eigenvalues().max();
        let threshold = p_norm.powi(-10) / 3000.0;
        let dir = gauss(3, 5, rng);
        let err = dir.clone() * ((rng.open01() * threshold).sqrt() / dir.norm());
        let est = StateSpace::from_stacked(&(sys.stacked() + &err))?;
        let (_, k_hat) = lqr(&est, &cost)?;
        let gap = avg_cost(&sys, &cost, &k_hat)? - avg_cost(&sys, &cost, &k_star)?;
        if gap <= 142.0 * p_norm.powi(8) * err.norm_squared() {
            held += 1;
        }
    }
    Ok((held == n, format!("bound held in {held}/{n} cases")))
}

fn excited_data(sys: &StateSpace, steps: usize, noise: &NoiseModel, rng: &mut RandomStream) -> Result<Trajectory> {
    let k = Mat::zeros(sys.du(), sys.dx());
    Ok(rollout(sys, &k, 1.0, steps, &Vector::zeros(sys.dx()), noise, None, rng)?.0)
}

fn ls_oracle(rng: &mut RandomStream) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let sys = random_system(3, 2, rng);
        let sys = StateSpace { a: sys.a * 0.7, b: sys.b };
        let traj = excited_data(&sys, 60, &NoiseModel::gaussian(&Mat::identity(3, 3)), rng)?;
        let stats = CovStats::from_trajectory(&traj)?;
        let theta = ls_weights(&OrthoBasis::identity(15, 15)?, &stats)?;
        // Dense normal equations over the stacked regressor rows.
        let (mut zz, mut zx) = (Mat::zeros(5, 5), Mat::zeros(5, 3));
        for t in 0..traj.len() {
            let z = traj.regressor(t);
            zz += &z * z.transpose();
            zx += &z * traj.states[t + 1].transpose();
        }
        let ab = zx.transpose() * zz.try_inverse().expect("excited data");
        worst = worst.max((theta - vec(&ab)).amax() / ab.amax());
    }
    Ok((worst < 1e-8, format!("worst relative deviation {worst:.2e}")))
}

fn loss(phi: &Mat, theta: &Vector, traj: &Trajectory) -> f64 {
    let m = phi * theta;
    let ab = Mat::from_column_slice(traj.states[0].len(), m.len() / traj.states[0].len(), m.as_slice());
    (0..traj.len()).map(|t| 0.5 * (&traj.states[t + 1] - &ab * traj.regressor(t)).norm_squared()).sum()
}

fn gradient_fd(rng: &mut RandomStream) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let sys = random_system(2, 1, rng);
        let sys = StateSpace { a: sys.a * 0.7, b: sys.b };
        let traj = excited_data(&sys, 30, &NoiseModel::gaussian(&Mat::identity(2, 2)), rng)?;
        let phi = perturbed_basis(&OrthoBasis::identity(6, 2)?, 0.5, rng)?;
        let theta = Vector::from_fn(2, |_, _| rng.normal());
        let g = raw_gradient(&phi, &theta, &CovStats::from_trajectory(&traj)?)?;
        let eps = 1e-5;
        let mut fd = Mat::zeros(6, 2);
        for i in 0..6 {
            for j in 0..2 {
                let mut up = phi.mat().clone();
                up[(i, j)] += eps;
                let mut dn = phi.mat().clone();
                dn[(i, j)] -= eps;
                fd[(i, j)] = (loss(&up, &theta, &traj) - loss(&dn, &theta, &traj)) / (2.0 * eps);
            }
        }
        worst = worst.max((&g - &fd).norm() / g.norm());
    }
    Ok((worst < 1e-5, format!("worst relative error {worst:.2e}")))
}

fn dfw_contraction(rng: &mut RandomStream) -> Result<(bool, String)> {
    let fleet = build_synthetic_fleet(4, 2, 3, 8, 0.3, rng)?;
    let data = fleet
        .systems
        .iter()
        .map(|s| excited_data(s, 40, &NoiseModel::None, rng))
        .collect::<Result<Vec<_>>>()?;
    let phi0 = perturbed_basis(&fleet.basis.phi, 0.5, rng)?;
    let report = dfw_run(&phi0, &data, 1000, 0.25, DfwMode::FullData, Some(&fleet.basis.phi))?;
    let last = subspace_distance(&report.final_phi, &fleet.basis.phi)?;
    let monotone = report.iterates.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok((monotone && last < 1e-6, format!("distance {:.3} -> {last:.2e}, monotone: {monotone}", report.iterates[0])))
}

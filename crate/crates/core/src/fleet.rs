//! Fleets of linear systems whose `[A B]` matrices live in a shared
//! low-dimensional subspace.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::lqr::{lqr_gain, spectral_radius, CostParams, StateSpace};
use crate::matkit::{lambda_max, lambda_min, thin_qr, vec, vec_inv, Mat, OrthoBasis, Vector};
use crate::rng::RandomStream;

/// Default relative singular-value cut-off when extracting a shared basis.
pub const BASIS_RANK_TOL: f64 = 1e-8;

/// Nominal `(M, m, l)` tuples cycled through by [`build_cartpole_fleet`].
pub const CARTPOLE_NOMINALS: [(f64, f64, f64); 5] = [
    (0.4, 1.0, 1.0),
    (1.6, 1.3, 0.3),
    (1.3, 0.7, 0.65),
    (0.2, 0.055, 1.36),
    (0.2, 0.47, 1.825),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
}

impl CartpoleParams {
    pub fn new(cart_mass: f64, pole_mass: f64, pole_length: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(cart_mass) && ok(pole_mass) && ok(pole_length)) {
            return Err(Error::Setup(format!(
                "cartpole parameters must be positive, got ({cart_mass}, {pole_mass}, {pole_length})"
            )));
        }
        Ok(Self { cart_mass, pole_mass, pole_length })
    }
}

/// Euler-discretized linearization about the upright equilibrium.
///
/// State order is `[position, velocity, angle, angular rate]`.
pub fn linearize_cartpole(p: &CartpoleParams, gravity: f64, dt: f64) -> StateSpace {
    let (mc, mp, l) = (p.cart_mass, p.pole_mass, p.pole_length);
    let mut a = Mat::identity(4, 4);
    a[(0, 1)] = dt;
    a[(1, 2)] = -dt * mp * gravity / mc;
    a[(2, 3)] = dt;
    a[(3, 2)] = dt * (mc + mp) * gravity / (mc * l);
    let b = Mat::from_column_slice(4, 1, &[0.0, dt / mc, 0.0, -dt / (mc * l)]);
    StateSpace { a, b }
}

/// Shared basis `Phi` and per-task weights with `[A_h B_h] = vec_inv(Phi theta_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedBasis {
    pub phi: OrthoBasis,
    pub thetas: Vec<Vector>,
}

impl SharedBasis {
    pub fn d_theta(&self) -> usize {
        self.phi.dim()
    }

    pub fn reconstruct(&self, h: usize, d_x: usize) -> Result<Mat> {
        vec_inv(&(self.phi.mat() * &self.thetas[h]), d_x)
    }

    /// `sum_h theta_h theta_h^T`.
    pub fn theta_gram(&self) -> Mat {
        let d = self.d_theta();
        self.thetas
            .iter()
            .fold(Mat::zeros(d, d), |acc, t| acc + t * t.transpose())
    }

    /// Whether `sum_h theta_h theta_h^T` has full rank `d_theta`.
    pub fn is_identifiable(&self) -> bool {
        let g = self.theta_gram();
        let hi = lambda_max(&g);
        hi > 0.0 && lambda_min(&g) > 1e-10 * hi
    }
}

#[derive(Debug, Clone)]
pub struct Fleet {
    pub systems: Vec<StateSpace>,
    pub basis: SharedBasis,
    pub k0: Vec<Mat>,
    pub cost: CostParams,
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    pub fn dx(&self) -> usize {
        self.systems[0].dx()
    }

    pub fn du(&self) -> usize {
        self.systems[0].du()
    }

    /// Checks shapes, that every `K0` stabilizes its system and that the
    /// weights are identifiable.
    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() || self.k0.len() != self.systems.len() || self.basis.thetas.len() != self.systems.len() {
            return Err(Error::FleetConstruction("inconsistent fleet sizes".into()));
        }
        let (dx, du) = (self.dx(), self.du());
        if self.basis.phi.ambient_dim() != dx * (dx + du) {
            return Err(Error::FleetConstruction("basis has wrong ambient dimension".into()));
        }
        for (h, (sys, k0)) in self.systems.iter().zip(&self.k0).enumerate() {
            if sys.dx() != dx || sys.du() != du || k0.shape() != (du, dx) {
                return Err(Error::FleetConstruction(format!("system {h} has inconsistent shape")));
            }
            let rho = spectral_radius(&sys.closed_loop(k0));
            if !(rho < 1.0) {
                return Err(Error::FleetConstruction(format!(
                    "initial gain of system {h} is not stabilizing (spectral radius {rho:.4})"
                )));
            }
        }
        if !self.basis.is_identifiable() {
            return Err(Error::FleetConstruction("task weights are not full rank".into()));
        }
        Ok(())
    }

    /// Largest `|vec_inv(Phi theta_h) - [A_h B_h]|_max` over the fleet.
    pub fn reconstruction_error(&self) -> f64 {
        let dx = self.dx();
        self.systems
            .iter()
            .enumerate()
            .map(|(h, sys)| {
                let rec = self.basis.reconstruct(h, dx).expect("basis shape validated");
                (rec - sys.stacked()).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Options for [`build_cartpole_fleet_with`].
#[derive(Debug, Clone)]
pub struct CartpoleFleetOptions {
    /// Width of the additive uniform perturbation applied to each of
    /// `(M, m, l)`; zero reproduces the nominals.
    pub perturbation: f64,
    pub gravity: f64,
    pub dt: f64,
    pub noise_var: f64,
    pub max_attempts: usize,
}

impl Default for CartpoleFleetOptions {
    fn default() -> Self {
        Self {
            perturbation: 0.1,
            gravity: 1.0,
            dt: 0.25,
            noise_var: 0.01,
            max_attempts: 100,
        }
    }
}

pub fn build_cartpole_fleet(h: usize, rng: &RandomStream) -> Result<Fleet> {
    build_cartpole_fleet_with(h, rng, &CartpoleFleetOptions::default())
}

/// Perturbed cartpole fleet. Slot `i` uses nominal `i mod 5` and its own
/// forked stream, so the first agents of a seed are the same for every `H`.
pub fn build_cartpole_fleet_with(h: usize, rng: &RandomStream, opts: &CartpoleFleetOptions) -> Result<Fleet> {
    if h == 0 {
        return Err(Error::FleetConstruction("fleet needs at least one system".into()));
    }
    let cost = CostParams::standard(4, 1, opts.noise_var);
    let mut systems = Vec::with_capacity(h);
    let mut k0 = Vec::with_capacity(h);
    for slot in 0..h {
        let (mc, mp, l) = CARTPOLE_NOMINALS[slot % CARTPOLE_NOMINALS.len()];
        let nominal = linearize_cartpole(&CartpoleParams::new(mc, mp, l)?, opts.gravity, opts.dt);
        let gain = lqr_gain(&nominal, &cost)
            .map_err(|e| Error::FleetConstruction(format!("nominal {slot} has no LQR gain: {e}")))?;
        let mut slot_rng = rng.fork(&[0xF1EE7, slot as u64]);
        let mut chosen = None;
        for _ in 0..opts.max_attempts.max(1) {
            let mut jitter = || if opts.perturbation > 0.0 { opts.perturbation * slot_rng.open01() } else { 0.0 };
            let params = CartpoleParams::new(mc + jitter(), mp + jitter(), l + jitter())?;
            let sys = linearize_cartpole(&params, opts.gravity, opts.dt);
            if spectral_radius(&sys.closed_loop(&gain)) < 1.0 {
                chosen = Some(sys);
                break;
            }
        }
        let sys = chosen.ok_or_else(|| {
            Error::FleetConstruction(format!(
                "slot {slot}: nominal gain failed to stabilize {} perturbed draws",
                opts.max_attempts
            ))
        })?;
        systems.push(sys);
        k0.push(gain);
    }
    let basis = extract_shared_basis(&systems, BASIS_RANK_TOL)?;
    log::debug!("cartpole fleet H={h}: d_theta = {}", basis.d_theta());
    let fleet = Fleet { systems, basis, k0, cost };
    fleet.validate()?;
    Ok(fleet)
}

/// Left singular vectors of the stacked `vec([A_h B_h])` columns above
/// `rel_rank_tol * sigma_max`; weights are the projections.
pub fn extract_shared_basis(systems: &[StateSpace], rel_rank_tol: f64) -> Result<SharedBasis> {
    if systems.is_empty() {
        return Err(Error::FleetConstruction("no systems to extract a basis from".into()));
    }
    let cols: Vec<Vector> = systems.iter().map(|s| vec(&s.stacked())).collect();
    let p = cols[0].len();
    if cols.iter().any(|c| c.len() != p) {
        return Err(Error::Dimension("systems have different shapes".into()));
    }
    let stacked = Mat::from_columns(&cols);
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let mut keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_rank_tol * smax)
        .collect();
    keep.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    if keep.is_empty() {
        return Err(Error::FleetConstruction("all systems are zero".into()));
    }
    let mut phi = Mat::zeros(p, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let mut col = u.column(i).into_owned();
        // Sign convention: weights sum to a non-negative value per direction.
        let total: f64 = cols.iter().map(|v| col.dot(v)).sum();
        if total < 0.0 {
            col.neg_mut();
        }
        phi.set_column(c, &col);
    }
    let phi = OrthoBasis::new(phi)?;
    let thetas = cols.iter().map(|v| phi.mat().transpose() * v).collect();
    Ok(SharedBasis { phi, thetas })
}

/// Random fleet that satisfies the shared-basis decomposition exactly.
pub fn build_synthetic_fleet(
    d_x: usize,
    d_u: usize,
    d_theta: usize,
    h: usize,
    stability_margin: f64,
    rng: &RandomStream,
) -> Result<Fleet> {
    let p = d_x * (d_x + d_u);
    if d_x == 0 || d_u == 0 || d_theta == 0 || d_theta > p || h < d_theta {
        return Err(Error::FleetConstruction(format!(
            "need 1 <= d_theta <= {p} and H >= d_theta (got d_theta={d_theta}, H={h})"
        )));
    }
    if !(stability_margin < 1.0) {
        return Err(Error::FleetConstruction("stability margin must be below 1".into()));
    }
    let cost = CostParams::standard(d_x, d_u, 1.0);
    let mut draw_rng = rng.fork(&[0x5EED, 0]);
    for _attempt in 0..20 {
        let (phi, _) = thin_qr(&Mat::from_fn(p, d_theta, |_, _| draw_rng.normal()))?;
        let mut thetas = Vec::with_capacity(h);
        for _ in 0..h {
            let mut theta = Vector::from_fn(d_theta, |_, _| draw_rng.normal());
            if stability_margin > 0.0 {
                let ab = vec_inv(&(phi.mat() * &theta), d_x)?;
                let rho = spectral_radius(&ab.columns(0, d_x).into_owned());
                let cap = 1.0 - stability_margin;
                if rho > cap {
                    theta *= cap / rho;
                }
            }
            thetas.push(theta);
        }
        let basis = SharedBasis { phi, thetas };
        if !basis.is_identifiable() {
            continue;
        }
        let systems = (0..h)
            .map(|i| StateSpace::from_stacked(&basis.reconstruct(i, d_x)?))
            .collect::<Result<Vec<_>>>()?;
        let all_stable = systems.iter().all(|s| spectral_radius(&s.a) < 1.0);
        let k0 = if all_stable {
            vec![Mat::zeros(d_u, d_x); h]
        } else {
            systems.iter().map(|s| lqr_gain(s, &cost)).collect::<Result<Vec<_>>>()?
        };
        let fleet = Fleet { systems, basis, k0, cost };
        fleet.validate()?;
        return Ok(fleet);
    }
    Err(Error::FleetConstruction("task weights rank deficient after 20 draws".into()))
}

/// `lambda_min(Phi^T ([I; K][I; K]^T kron I) Phi)`: how well a fixed gain
/// excites the directions of `basis` without exploratory input.
pub fn excitation_level(basis: &OrthoBasis, k: &Mat) -> Result<f64> {
    let (du, dx) = k.shape();
    if basis.ambient_dim() != dx * (dx + du) {
        return Err(Error::Dimension(format!(
            "basis of dimension {} does not match a {du}x{dx} gain",
            basis.ambient_dim()
        )));
    }
    let mut ik = Mat::zeros(dx + du, dx);
    ik.rows_mut(0, dx).fill_with_identity();
    ik.rows_mut(dx, du).copy_from(k);
    // (W kron I) vec(M) = vec(M W), and W = [I;K][I;K]^T, so each entry is
    // <M_a [I;K], M_b [I;K]>.
    let projected: Vec<Mat> = basis
        .mat()
        .column_iter()
        .map(|c| Ok(vec_inv(&c.into_owned(), dx)? * &ik))
        .collect::<Result<_>>()?;
    let d = basis.dim();
    let gram = Mat::from_fn(d, d, |a, b| projected[a].dot(&projected[b]));
    Ok(lambda_min(&gram))
}

fn write_mat<W: Write>(out: &mut W, m: &Mat) -> std::io::Result<()> {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", cells.join(" "))?;
    }
    Ok(())
}

/// Plain-text fleet dump: a header line `H d_x d_u d_theta`, then `Q`, `R`,
/// `W`, `Phi`, and per system `A`, `B`, `K0`, `theta^T`, one matrix row per
/// line.
pub fn write_fleet<W: Write>(fleet: &Fleet, out: &mut W) -> std::io::Result<()> {
    let (dx, du) = (fleet.dx(), fleet.du());
    writeln!(out, "{} {} {} {}", fleet.len(), dx, du, fleet.basis.d_theta())?;
    write_mat(out, &fleet.cost.q)?;
    write_mat(out, &fleet.cost.r)?;
    write_mat(out, &fleet.cost.w_cov)?;
    write_mat(out, fleet.basis.phi.mat())?;
    for h in 0..fleet.len() {
        write_mat(out, &fleet.systems[h].a)?;
        write_mat(out, &fleet.systems[h].b)?;
        write_mat(out, &fleet.k0[h])?;
        write_mat(out, &Mat::from_row_slice(1, fleet.basis.d_theta(), fleet.basis.thetas[h].as_slice()))?;
    }
    Ok(())
}

pub fn read_fleet<R: BufRead>(input: R) -> Result<Fleet> {
    let mut lines = input.lines().filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let mut next_row = |n: usize| -> Result<Vec<f64>> {
        let line = lines.next().ok_or_else(|| Error::Parse("fleet file truncated".into()))??;
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad number {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != n {
            return Err(Error::Parse(format!("expected {n} values, found {}", row.len())));
        }
        Ok(row)
    };
    let header = next_row(4)?;
    let [h, dx, du, dt] = [header[0], header[1], header[2], header[3]].map(|v| v as usize);
    let mut read_mat = |r: usize, c: usize| -> Result<Mat> {
        let mut m = Mat::zeros(r, c);
        for i in 0..r {
            let row = next_row(c)?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    };
    let q = read_mat(dx, dx)?;
    let r = read_mat(du, du)?;
    let w_cov = read_mat(dx, dx)?;
    let phi = OrthoBasis::new(read_mat(dx * (dx + du), dt)?)?;
    let mut systems = Vec::with_capacity(h);
    let mut k0 = Vec::with_capacity(h);
    let mut thetas = Vec::with_capacity(h);
    for _ in 0..h {
        let a = read_mat(dx, dx)?;
        let b = read_mat(dx, du)?;
        systems.push(StateSpace::new(a, b)?);
        k0.push(read_mat(du, dx)?);
        thetas.push(Vector::from_column_slice(read_mat(1, dt)?.as_slice()));
    }
    Ok(Fleet {
        systems,
        basis: SharedBasis { phi, thetas },
        k0,
        cost: CostParams::new(q, r, w_cov)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matkit::{max_abs, subspace_distance};
    use approx::assert_relative_eq;

    #[test]
    fn cartpole_linearization_matches_hand_derivation() {
        let p = CartpoleParams::new(0.4, 1.0, 1.0).unwrap();
        let sys = linearize_cartpole(&p, 1.0, 0.25);
        let a = Mat::from_row_slice(
            4,
            4,
            &[1.0, 0.25, 0.0, 0.0, 0.0, 1.0, -0.625, 0.0, 0.0, 0.0, 1.0, 0.25, 0.0, 0.0, 0.875, 1.0],
        );
        let b = Mat::from_column_slice(4, 1, &[0.0, 0.625, 0.0, -0.625]);
        assert_relative_eq!(sys.a, a, epsilon = 1e-15);
        assert_relative_eq!(sys.b, b, epsilon = 1e-15);
    }

    #[test]
    fn cartpole_small_step_limit_and_kinematics() {
        let p = CartpoleParams::new(1.3, 0.7, 0.65).unwrap();
        let sys = linearize_cartpole(&p, 1.0, 1e-9);
        assert!(max_abs(&(&sys.a - Mat::identity(4, 4))) < 1e-8);
        assert!(max_abs(&sys.b) < 1e-8);
        let sys = linearize_cartpole(&p, 9.81, 0.1);
        assert_eq!(sys.a.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.1, 0.0, 0.0]);
    }

    #[test]
    fn cartpole_params_must_be_positive() {
        assert!(CartpoleParams::new(0.0, 1.0, 1.0).is_err());
        assert!(CartpoleParams::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn unperturbed_fleet_reproduces_nominals() {
        let opts = CartpoleFleetOptions { perturbation: 0.0, ..Default::default() };
        let fleet = build_cartpole_fleet_with(5, &RandomStream::new(1), &opts).unwrap();
        for (h, &(mc, mp, l)) in CARTPOLE_NOMINALS.iter().enumerate() {
            let want = linearize_cartpole(&CartpoleParams::new(mc, mp, l).unwrap(), 1.0, 0.25);
            assert_eq!(fleet.systems[h], want);
        }
    }

    #[test]
    fn large_cartpole_fleet_is_stabilized_and_reconstructs() {
        let fleet = build_cartpole_fleet(100, &RandomStream::new(2)).unwrap();
        for (sys, k) in fleet.systems.iter().zip(&fleet.k0) {
            assert!(spectral_radius(&sys.closed_loop(k)) < 1.0);
        }
        assert!(fleet.reconstruction_error() < 1e-8);
        assert_eq!(fleet.basis.d_theta(), 5);
        assert_eq!(fleet.cost.w_cov, Mat::identity(4, 4) * 0.01);
    }

    #[test]
    fn leading_slots_do_not_depend_on_fleet_size() {
        let rng = RandomStream::new(3);
        let small = build_cartpole_fleet(25, &rng).unwrap();
        let big = build_cartpole_fleet(100, &rng).unwrap();
        assert_eq!(small.systems[..25], big.systems[..25]);
    }

    #[test]
    fn single_system_basis_is_rank_one() {
        let p = CartpoleParams::new(0.4, 1.0, 1.0).unwrap();
        let sys = linearize_cartpole(&p, 1.0, 0.25);
        let basis = extract_shared_basis(std::slice::from_ref(&sys), BASIS_RANK_TOL).unwrap();
        let v = vec(&sys.stacked());
        assert_eq!(basis.d_theta(), 1);
        assert_relative_eq!(basis.thetas[0][0], v.norm(), epsilon = 1e-12);
        assert!((basis.phi.mat().column(0) - &v / v.norm()).amax() < 1e-12);
    }

    #[test]
    fn synthetic_fleet_basis_is_recovered() {
        let fleet = build_synthetic_fleet(3, 2, 3, 8, 0.1, &RandomStream::new(4)).unwrap();
        assert!(fleet.reconstruction_error() < 1e-12);
        let recovered = extract_shared_basis(&fleet.systems, BASIS_RANK_TOL).unwrap();
        assert_eq!(recovered.d_theta(), 3);
        assert!(subspace_distance(&recovered.phi, &fleet.basis.phi).unwrap() < 1e-8);
        for sys in &fleet.systems {
            assert!(spectral_radius(&sys.a) <= 0.9 + 1e-12);
        }
    }

    #[test]
    fn synthetic_fleet_full_basis_and_minimal_tasks() {
        let fleet = build_synthetic_fleet(2, 1, 6, 6, 0.2, &RandomStream::new(5)).unwrap();
        let phi = fleet.basis.phi.mat();
        assert!(max_abs(&(phi * phi.transpose() - Mat::identity(6, 6))) < 1e-10);
        assert!(lambda_min(&fleet.basis.theta_gram()) > 0.0);
    }

    #[test]
    fn synthetic_fleet_rejects_too_few_tasks() {
        assert!(build_synthetic_fleet(3, 1, 4, 2, 0.1, &RandomStream::new(6)).is_err());
    }

    fn dense_excitation(basis: &OrthoBasis, k: &Mat) -> f64 {
        let (du, dx) = k.shape();
        let mut ik = Mat::zeros(dx + du, dx);
        ik.rows_mut(0, dx).fill_with_identity();
        ik.rows_mut(dx, du).copy_from(k);
        let w = &ik * ik.transpose();
        let big = w.kronecker(&Mat::identity(dx, dx));
        lambda_min(&(basis.mat().transpose() * big * basis.mat()))
    }

    #[test]
    fn excitation_examples() {
        let full = OrthoBasis::identity(6, 6).unwrap();
        let k = Mat::from_row_slice(1, 2, &[0.3, -0.7]);
        assert!(excitation_level(&full, &k).unwrap().abs() < 1e-12);

        // single direction vec([M 0]) with K = 0 gives |M|_F^2 / |v|^2 = 1
        let m = Mat::from_row_slice(2, 2, &[0.6, 0.0, 0.0, 0.8]);
        let mut ab = Mat::zeros(2, 3);
        ab.columns_mut(0, 2).copy_from(&m);
        let v = vec(&ab);
        let single = OrthoBasis::new(Mat::from_column_slice(6, 1, v.as_slice())).unwrap();
        let level = excitation_level(&single, &Mat::zeros(1, 2)).unwrap();
        assert_relative_eq!(level, dense_excitation(&single, &Mat::zeros(1, 2)), epsilon = 1e-12);
        assert_relative_eq!(level, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn excitation_matches_dense_kronecker_and_is_rotation_invariant() {
        let mut rng = RandomStream::new(7);
        for (dx, du, d) in [(2, 1, 2), (3, 2, 4), (3, 1, 3)] {
            let p = dx * (dx + du);
            let (basis, _) = thin_qr(&Mat::from_fn(p, d, |_, _| rng.normal())).unwrap();
            let k = Mat::from_fn(du, dx, |_, _| rng.normal());
            let fast = excitation_level(&basis, &k).unwrap();
            assert!((fast - dense_excitation(&basis, &k)).abs() < 1e-10);
            let (u, _) = thin_qr(&Mat::from_fn(d, d, |_, _| rng.normal())).unwrap();
            let rotated = OrthoBasis::new(basis.mat() * u.mat()).unwrap();
            assert!((excitation_level(&rotated, &k).unwrap() - fast).abs() < 1e-10);
        }
    }

    #[test]
    fn fleet_file_round_trip() {
        let fleet = build_cartpole_fleet(7, &RandomStream::new(8)).unwrap();
        let mut buf = Vec::new();
        write_fleet(&fleet, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("7 4 1 5\n"));
        let back = read_fleet(buf.as_slice()).unwrap();
        assert_eq!(back.systems, fleet.systems);
        assert_eq!(back.k0, fleet.k0);
        assert_eq!(back.basis, fleet.basis);
        assert_eq!(back.cost, fleet.cost);
    }
}

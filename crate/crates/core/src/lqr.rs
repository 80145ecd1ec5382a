//! Discrete-time LQR: Lyapunov and Riccati solvers, gain synthesis,
//! average-cost evaluation and the certainty-equivalence bound.

use crate::error::{Error, Result};
use crate::matkit::{lambda_max, lambda_min, max_abs, symmetrize, Mat};

const DLYAP_MAX_DOUBLINGS: usize = 128;
const DARE_MAX_ITERS: usize = 1_000_000;
const DARE_REL_STOP: f64 = 1e-12;
// Value iteration on an unstabilizable pair grows without bound; bail out
// long before overflow.
const DARE_DIVERGENCE: f64 = 1e14;

/// True dynamics `x+ = A x + B u + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "A is {:?}, B is {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Dimension("non-finite system entries".into()));
        }
        Ok(Self { a, b })
    }

    /// Splits a `d_x x (d_x + d_u)` matrix `[A B]`.
    pub fn from_stacked(ab: &Mat) -> Result<Self> {
        let dx = ab.nrows();
        if ab.ncols() <= dx {
            return Err(Error::Dimension(format!("[A B] has shape {:?}", ab.shape())));
        }
        Self::new(ab.columns(0, dx).into_owned(), ab.columns(dx, ab.ncols() - dx).into_owned())
    }

    pub fn stacked(&self) -> Mat {
        let (dx, du) = (self.dx(), self.du());
        let mut ab = Mat::zeros(dx, dx + du);
        ab.columns_mut(0, dx).copy_from(&self.a);
        ab.columns_mut(dx, du).copy_from(&self.b);
        ab
    }

    pub fn dx(&self) -> usize {
        self.a.nrows()
    }

    pub fn du(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a + &self.b * k
    }
}

/// Stage-cost weights and process-noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub q: Mat,
    pub r: Mat,
    pub w_cov: Mat,
}

impl CostParams {
    pub fn new(q: Mat, r: Mat, w_cov: Mat) -> Result<Self> {
        let dx = q.nrows();
        if !q.is_square() || !r.is_square() || w_cov.shape() != (dx, dx) {
            return Err(Error::Dimension("cost matrices have inconsistent shapes".into()));
        }
        if max_abs(&(&q - q.transpose())) > 1e-12 || lambda_min(&q) < 1.0 - 1e-10 {
            return Err(Error::Setup("Q must be symmetric with Q >= I".into()));
        }
        if r != Mat::identity(r.nrows(), r.nrows()) {
            return Err(Error::Setup("R must be the identity".into()));
        }
        if max_abs(&(&w_cov - w_cov.transpose())) > 1e-12 || lambda_min(&w_cov) < -1e-12 {
            return Err(Error::Setup("noise covariance must be symmetric PSD".into()));
        }
        Ok(Self { q, r, w_cov })
    }

    /// `Q = I`, `R = I`, `W = noise_var * I`.
    pub fn standard(dx: usize, du: usize, noise_var: f64) -> Self {
        Self {
            q: Mat::identity(dx, dx),
            r: Mat::identity(du, du),
            w_cov: Mat::identity(dx, dx) * noise_var,
        }
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves `P = A^T P A + Q` by doubling.
pub fn dlyap_solve(a_cl: &Mat, q: &Mat) -> Result<Mat> {
    if !a_cl.is_square() || q.shape() != a_cl.shape() {
        return Err(Error::Dimension("dlyap operands must be square and conformant".into()));
    }
    let rho = spectral_radius(a_cl);
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let mut p = q.clone();
    let mut ak = a_cl.clone();
    for _ in 0..DLYAP_MAX_DOUBLINGS {
        let inc = ak.transpose() * &p * &ak;
        p += &inc;
        ak = &ak * &ak;
        let pn = p.norm();
        if !pn.is_finite() {
            break;
        }
        if inc.norm() <= 1e-14 * pn {
            return Ok(symmetrize(&p));
        }
    }
    Err(Error::Convergence(format!(
        "Lyapunov doubling did not settle in {DLYAP_MAX_DOUBLINGS} steps"
    )))
}

fn riccati_gain(a: &Mat, b: &Mat, r: &Mat, p: &Mat) -> Result<Mat> {
    let bt_p = b.transpose() * p;
    let s = &bt_p * b + r;
    let rhs = &bt_p * a;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::NotStabilizable("B^T P B + R is not positive definite".into()))?;
    Ok(-chol.solve(&rhs))
}

/// Stabilizing DARE solution by Riccati value iteration from `P = Q`.
pub fn dare_solve(sys: &StateSpace, cost: &CostParams) -> Result<Mat> {
    Ok(lqr(sys, cost)?.0)
}

/// `(P, K)` with `P = dare(A, B, Q, R)` and `K = -(B^T P B + R)^{-1} B^T P A`.
pub fn lqr(sys: &StateSpace, cost: &CostParams) -> Result<(Mat, Mat)> {
    let (a, b) = (&sys.a, &sys.b);
    if cost.q.shape() != a.shape() || cost.r.nrows() != b.ncols() {
        return Err(Error::Dimension("cost does not match system".into()));
    }
    let at = a.transpose();
    let mut p = cost.q.clone();
    let mut converged = false;
    for _ in 0..DARE_MAX_ITERS {
        let k = riccati_gain(a, b, &cost.r, &p)?;
        // A^T P (A + B K) + Q equals the Riccati update for the minimizing K.
        let next = symmetrize(&(&at * &p * (a + b * &k) + &cost.q));
        let nn = next.norm();
        if !nn.is_finite() || nn > DARE_DIVERGENCE {
            return Err(Error::NotStabilizable(format!("Riccati iterates diverged (|P| = {nn:.3e})")));
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= DARE_REL_STOP * nn {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable(format!(
            "Riccati iteration hit the {DARE_MAX_ITERS}-step cap"
        )));
    }
    let k = riccati_gain(a, b, &cost.r, &p)?;
    let rho = spectral_radius(&sys.closed_loop(&k));
    if !(rho < 1.0) {
        return Err(Error::NotStabilizable(format!(
            "synthesized gain leaves spectral radius {rho:.6}"
        )));
    }
    Ok((p, k))
}

pub fn lqr_gain(sys: &StateSpace, cost: &CostParams) -> Result<Mat> {
    Ok(lqr(sys, cost)?.1)
}

/// Cost matrix `P_K = dlyap(A + B K, Q + K^T R K)` of a fixed gain.
pub fn gain_cost_matrix(sys: &StateSpace, cost: &CostParams, k: &Mat) -> Result<Mat> {
    if k.shape() != (sys.du(), sys.dx()) {
        return Err(Error::Dimension(format!("gain has shape {:?}", k.shape())));
    }
    let q_k = &cost.q + k.transpose() * &cost.r * k;
    dlyap_solve(&sys.closed_loop(k), &q_k)
}

/// Infinite-horizon average cost `trace(P_K W)`.
pub fn avg_cost(sys: &StateSpace, cost: &CostParams, k: &Mat) -> Result<f64> {
    let p_k = gain_cost_matrix(sys, cost, k)?;
    Ok((p_k * &cost.w_cov).trace())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeBound {
    /// Largest squared Frobenius model error the bound covers.
    pub threshold: f64,
    /// Bound on `J(K_hat) - J(K_star)`.
    pub bound: f64,
    /// Whether the supplied error is within `threshold`.
    pub applies: bool,
}

pub fn ce_suboptimality_bound(p_star: &Mat, est_err_sq: f64) -> CeBound {
    let norm = lambda_max(p_star);
    let threshold = norm.powi(-10) / 3000.0;
    CeBound {
        threshold,
        bound: 142.0 * norm.powi(8) * est_err_sq,
        applies: est_err_sq <= threshold,
    }
}

//! Dense matrix utilities: vectorization, orthonormal bases, subspace
//! geometry and controlled basis perturbation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Orthonormality tolerance for [`OrthoBasis`].
pub const ORTHO_TOL: f64 = 1e-10;

/// Default relative cut-off for [`pinv`].
pub const PINV_REL_TOL: f64 = 1e-10;

/// A `p x d` matrix (`p >= d`) with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis(Mat);

impl OrthoBasis {
    /// Wraps `mat` after checking `mat^T mat = I` to [`ORTHO_TOL`].
    pub fn new(mat: Mat) -> Result<Self> {
        if mat.nrows() < mat.ncols() || mat.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "basis must be p x d with p >= d >= 1, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let err = orthonormality_error(&mat);
        if !(err <= ORTHO_TOL) {
            return Err(Error::Tolerance(format!(
                "columns not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(Self(mat))
    }

    /// The first `d` standard basis vectors of `R^p`.
    pub fn identity(p: usize, d: usize) -> Result<Self> {
        Self::new(Mat::identity(p, d))
    }

    pub fn mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

pub fn orthonormality_error(m: &Mat) -> f64 {
    let g = m.transpose() * m;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Column-major flatten of a `d_x x (d_x + d_u)` matrix.
pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Stacks contiguous length-`d_x` blocks of `v` into the columns of a
/// `d_x`-row matrix, left to right.
pub fn vec_inv(v: &Vector, d_x: usize) -> Result<Mat> {
    if d_x == 0 || v.len() % d_x != 0 || v.is_empty() {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot be split into blocks of {d_x}",
            v.len()
        )));
    }
    Ok(Mat::from_column_slice(d_x, v.len() / d_x, v.as_slice()))
}

/// Thin QR with the positive-diagonal convention on `R`, which makes the
/// factorization unique.
pub fn thin_qr(m: &Mat) -> Result<(OrthoBasis, Mat)> {
    let (p, d) = m.shape();
    if p < d || d == 0 {
        return Err(Error::Dimension(format!("thin QR needs p >= d >= 1, got {p}x{d}")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateFactorization("non-finite input".into()));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..d {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::DegenerateFactorization(format!(
            "input is rank deficient (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    Ok((OrthoBasis::new(q)?, r))
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// `||a_perp^T b||_2`, the sine of the largest principal angle.
pub fn subspace_distance(a: &OrthoBasis, b: &OrthoBasis) -> Result<f64> {
    if a.mat().shape() != b.mat().shape() {
        return Err(Error::Dimension(format!(
            "subspace distance between {:?} and {:?} bases",
            a.mat().shape(),
            b.mat().shape()
        )));
    }
    // a_perp a_perp^T = I - a a^T, and a_perp has orthonormal columns.
    let resid = b.mat() - a.mat() * (a.mat().transpose() * b.mat());
    Ok(spectral_norm(&resid).clamp(0.0, 1.0))
}

/// Orthonormal basis of the orthogonal complement of `span(a)`.
pub fn orthonormal_complement(a: &OrthoBasis) -> Result<OrthoBasis> {
    let (p, d) = a.mat().shape();
    if d >= p {
        return Err(Error::EmptyComplement);
    }
    let mut aug = Mat::zeros(p, d + p);
    aug.columns_mut(0, d).copy_from(a.mat());
    aug.columns_mut(d, p).fill_with_identity();
    let q = aug.qr().q();
    let mut comp = q.columns(d, p - d).into_owned();
    // One pass of re-projection keeps round-off from leaking back into span(a).
    let leak = a.mat() * (a.mat().transpose() * &comp);
    comp -= leak;
    let (basis, _) = thin_qr(&comp)?;
    Ok(basis)
}

/// Builds a basis whose subspace distance to `target` is `dist` (to within
/// 0.005) by tilting `target` toward a random complement direction.
pub fn perturbed_basis(target: &OrthoBasis, dist: f64, rng: &mut RandomStream) -> Result<OrthoBasis> {
    if !(0.0..1.0).contains(&dist) {
        return Err(Error::Tolerance(format!("target distance {dist} outside [0, 1)")));
    }
    if dist == 0.0 {
        return Ok(target.clone());
    }
    let comp = orthonormal_complement(target)?;
    let d = target.dim();
    let g = Mat::from_fn(comp.dim(), d, |_, _| rng.normal());
    let direction = comp.mat() * g;

    let tilt = |c: f64| -> Result<(OrthoBasis, f64)> {
        let (q, _) = thin_qr(&(target.mat() + &direction * c))?;
        let measured = subspace_distance(target, &q)?;
        Ok((q, measured))
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut grow = 0;
    while tilt(hi)?.1 < dist {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::Tolerance("could not bracket target distance".into()));
        }
    }
    let mut best = tilt(hi)?;
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let cand = tilt(mid)?;
        if cand.1 < dist {
            lo = mid;
        } else {
            hi = mid;
        }
        if (cand.1 - dist).abs() < (best.1 - dist).abs() {
            best = cand;
        }
        if (best.1 - dist).abs() < 1e-12 {
            break;
        }
    }
    if (best.1 - dist).abs() > 0.005 {
        return Err(Error::Tolerance(format!(
            "bisection reached distance {:.6}, wanted {dist}",
            best.1
        )));
    }
    Ok(best.0)
}

/// Moore-Penrose pseudoinverse, zeroing singular values below
/// `rel_tol * sigma_max`.
pub fn pinv(m: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = m.shape();
    if m.iter().all(|&x| x == 0.0) {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let cut = rel_tol * smax;
    let mut out = Mat::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen(m: &Mat) -> (Vector, Mat) {
    let s = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Mat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigen(m).0[0]
}

pub fn lambda_max(m: &Mat) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals[vals.len() - 1]
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric PSD matrix via its eigen-decomposition.
/// Negative round-off eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let roots = Mat::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    &vecs * roots * vecs.transpose()
}

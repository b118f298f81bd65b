//! Symplectic SVD, small dense Williamson diagonalization and the symplectic
//! Rayleigh-Ritz (SRR) extraction step.
//!
//! All three rest on one kernel: the real Schur form of a skew-symmetric
//! matrix `K`, normalized to `Q^T K Q = [[0, D], [-D, 0]]` with `D` positive
//! and ascending. It is obtained from the Hermitian eigendecomposition of
//! `iK`: an eigenvector `z = x + iy` for eigenvalue `d > 0` gives the pair
//! `a = sqrt(2) y`, `b = sqrt(2) x` with `K b = d a` and `K a = -d b`.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::operators::{j_left, j_right, skew_part, sym_part, symplectic_gram, Basis, SpdOperator};

/// Default relative threshold for symplectic singular values in [`ssvd`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Block-normalized real Schur form of a skew-symmetric `2k x 2k` matrix.
#[derive(Clone, Debug)]
pub struct SkewSchur {
    /// Orthogonal, columns laid out as `[a_1..a_k, b_1..b_k]`.
    pub q: DMatrix<f64>,
    /// Ascending. Entries at or near zero mean the input was singular.
    pub d: Vec<f64>,
}

pub fn skew_schur(k: &DMatrix<f64>) -> Result<SkewSchur> {
    let dim = k.nrows();
    if dim != k.ncols() || dim % 2 != 0 {
        return Err(Error::arg(format!(
            "skew Schur form needs an even square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in skew matrix".into()));
    }
    let half = dim / 2;
    let k = skew_part(k);
    let herm = k.map(|v| Complex::new(0.0, v));
    let eig = SymmetricEigen::new(herm);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut positive: Vec<usize> = order[..half].to_vec();
    // ascending d, stable on ties
    positive.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut q = DMatrix::zeros(dim, dim);
    let mut d = Vec::with_capacity(half);
    let s2 = std::f64::consts::SQRT_2;
    for (slot, &idx) in positive.iter().enumerate() {
        let z = eig.eigenvectors.column(idx);
        // fix the free phase: the largest first-half entry of z becomes
        // positive imaginary, so the pair is deterministic and canonical
        // vectors stay canonical
        let pivot = (0..half)
            .max_by(|&i, &j| z[i].norm().total_cmp(&z[j].norm()))
            .filter(|&r| z[r].norm() > 1e-8)
            .or_else(|| (0..dim).max_by(|&i, &j| z[i].norm().total_cmp(&z[j].norm())))
            .unwrap_or(0);
        let phase = if z[pivot].norm() > 0.0 {
            Complex::<f64>::i() * z[pivot].conj().unscale(z[pivot].norm())
        } else {
            Complex::new(1.0, 0.0)
        };
        let z = z * phase;
        for r in 0..dim {
            q[(r, slot)] = s2 * z[r].im;
            q[(r, slot + half)] = s2 * z[r].re;
        }
        d.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(SkewSchur { q, d })
}

/// Factors of the symplectic SVD `X = S Sigma T^T`.
#[derive(Clone, Debug)]
pub struct SsvdFactors {
    /// `2n x 2p` with `S^T J_n S = J_p`.
    pub s: Basis,
    /// `(s_1..s_p, s_1..s_p)`, ascending within each half.
    pub sigma: Vec<f64>,
    /// `2p x 2p` orthogonal.
    pub t: DMatrix<f64>,
}

impl SsvdFactors {
    pub fn half_sigma(&self) -> &[f64] {
        &self.sigma[..self.sigma.len() / 2]
    }

    pub fn reconstruct(&self) -> Basis {
        let mut s_sigma = self.s.clone();
        for (j, &sv) in self.sigma.iter().enumerate() {
            s_sigma.column_mut(j).scale_mut(sv);
        }
        s_sigma * self.t.transpose()
    }
}

/// Spectral norm through the `2p x 2p` Gram matrix.
pub(crate) fn spectral_norm(x: &Basis) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    let g = sym_part(&x.tr_mul(x));
    g.symmetric_eigenvalues().max().max(0.0).sqrt()
}

pub fn ssvd(x: &Basis) -> Result<SsvdFactors> {
    ssvd_with_tol(x, DEFAULT_RANK_TOL)
}

/// Symplectic SVD. Fails with [`Error::RankDeficient`] when a symplectic
/// singular value is below `rel_tol * ||X||_2`.
pub fn ssvd_with_tol(x: &Basis, rel_tol: f64) -> Result<SsvdFactors> {
    if x.ncols() == 0 || x.ncols() % 2 != 0 || x.nrows() % 2 != 0 {
        return Err(Error::arg(format!(
            "SSVD needs even, nonzero dimensions, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let gram = symplectic_gram(x)?;
    let schur = skew_schur(&gram)?;
    let scale = spectral_norm(x);
    let half_sigma: Vec<f64> = schur.d.iter().map(|&d| d.max(0.0).sqrt()).collect();
    let deficient = half_sigma
        .iter()
        .filter(|&&s| !(s > rel_tol * scale))
        .count();
    if deficient > 0 {
        return Err(Error::RankDeficient { count: deficient });
    }
    let sigma: Vec<f64> = half_sigma.iter().chain(half_sigma.iter()).copied().collect();
    let t = schur.q;
    let mut s = x * &t;
    for (j, &sv) in sigma.iter().enumerate() {
        s.column_mut(j).unscale_mut(sv);
    }
    Ok(SsvdFactors { s, sigma, t })
}

/// Williamson normal form `S^T M S = D (+) D` of a dense SPD matrix.
#[derive(Clone, Debug)]
pub struct WilliamsonForm {
    /// `2k x 2k` symplectic.
    pub s: DMatrix<f64>,
    /// Symplectic eigenvalues, ascending.
    pub d: Vec<f64>,
}

/// Dense Williamson diagonalization via the symmetric root `R = M^{1/2}` and
/// the skew matrix `R J R`.
pub fn williamson_small(m: &DMatrix<f64>) -> Result<WilliamsonForm> {
    let dim = m.nrows();
    if dim != m.ncols() || dim == 0 || dim % 2 != 0 {
        return Err(Error::arg(format!(
            "Williamson form needs an even square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in matrix".into()));
    }
    let eig = SymmetricEigen::new(sym_part(m));
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || !(lmax.is_finite()) {
        return Err(Error::Numerical(format!(
            "matrix is not positive definite (smallest eigenvalue {lmin:e})"
        )));
    }
    let v = &eig.eigenvectors;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let r = v * root * v.transpose();
    let r_inv = v * inv_root * v.transpose();
    let r = sym_part(&r);
    let k = &r * j_left(&r)?;
    let schur = skew_schur(&k)?;
    let dmax = schur.d.last().copied().unwrap_or(0.0);
    if !(schur.d[0] > 1e-14 * dmax) {
        return Err(Error::Numerical(format!(
            "vanishing symplectic eigenvalue {:e} for a positive-definite input",
            schur.d[0]
        )));
    }
    let half = dim / 2;
    let mut s = sym_part(&r_inv) * schur.q;
    for j in 0..half {
        let w = schur.d[j].sqrt();
        s.column_mut(j).scale_mut(w);
        s.column_mut(j + half).scale_mut(w);
    }
    Ok(WilliamsonForm { s, d: schur.d })
}

/// Ritz pairs produced by [`srr`].
#[derive(Clone, Debug)]
pub struct RitzPairs {
    /// `2n x 2p` symplectic, with `basis^T A basis = D (+) D`.
    pub basis: Basis,
    /// Ritz values `theta_1 <= ... <= theta_p`.
    pub values: Vec<f64>,
}

/// Symplectic Rayleigh-Ritz: SSVD of `X`, Williamson form of the projected
/// `S^T A S`, refined basis `S S_hat`.
pub fn srr(op: &SpdOperator, x: &Basis) -> Result<RitzPairs> {
    let f = ssvd(x)?;
    let as_ = op.apply(&f.s)?;
    let projected = sym_part(&f.s.tr_mul(&as_));
    let w = williamson_small(&projected)?;
    Ok(RitzPairs {
        basis: &f.s * &w.s,
        values: w.d,
    })
}

/// `S (I - D/beta)^{1/2}` with the doubled diagonal pattern; the radicand is
/// floored at `1e-12`.
pub fn restart_point(s: &Basis, d: &[f64], beta: f64) -> Result<Basis> {
    if !(beta > 0.0) {
        return Err(Error::arg(format!("beta must be positive, got {beta}")));
    }
    let p = d.len();
    if s.ncols() != 2 * p {
        return Err(Error::arg(format!(
            "basis has {} columns, expected {}",
            s.ncols(),
            2 * p
        )));
    }
    let mut x = s.clone();
    for (j, &dj) in d.iter().enumerate() {
        let w = (1.0 - dj / beta).max(1e-12).sqrt();
        x.column_mut(j).scale_mut(w);
        x.column_mut(j + p).scale_mut(w);
    }
    Ok(x)
}

/// Stationarity transfer from the penalty problem to the constrained one.
///
/// With `X = S Sigma T^T` and `L = beta (Sigma^3 J T^T - Sigma T^T J) T Sigma^{-1}`,
/// returns `(||A S - J_n S L||_F, sqrt(2p d_max / sigma_min(X^T A X)) ||grad f(X)||_F)`.
/// `d_max` is the largest symplectic eigenvalue of `A`.
pub fn stationarity_transfer(
    op: &SpdOperator,
    x: &Basis,
    beta: f64,
    d_max: f64,
) -> Result<(f64, f64)> {
    let f = ssvd(x)?;
    let p2 = x.ncols();
    let sig = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(f.sigma.clone()));
    let sig_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        p2,
        f.sigma.iter().map(|s| 1.0 / s),
    ));
    let sig3 = sig.map(|v| v * v * v);
    let tt = f.t.transpose();
    let left = j_right(&sig3)? * &tt - &sig * j_right(&tt)?;
    let l = (left * &f.t * sig_inv) * beta;
    let as_ = op.apply(&f.s)?;
    let lhs = (as_ - j_left(&f.s)? * l).norm();

    let ax = op.apply(x)?;
    let xax = sym_part(&x.tr_mul(&ax));
    let smin = xax.symmetric_eigenvalues().min();
    let grad = crate::penalty::grad(op, x, beta)?;
    let rhs = (p2 as f64 * d_max / smin).sqrt() * grad.gradient.norm();
    Ok((lhs, rhs))
}

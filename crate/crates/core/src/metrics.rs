//! Subspace error and eigenpair residual.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{j_left, j_right, Basis, SpdOperator};
use crate::oracle::ReferenceSpectrum;
use crate::solver::SympEigResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Absent when no reference was supplied.
    pub golub_werman: Option<f64>,
    pub residue: f64,
    pub feasibility: f64,
    pub objective: f64,
    pub abs_errors: Vec<f64>,
    pub rel_errors: Vec<f64>,
}

/// Thin orthonormal factor from Householder QR, after a full-rank check.
fn orthonormal(x: &Basis) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 || x.ncols() > x.nrows() {
        return Err(Error::arg(format!("cannot orthonormalize a {}x{} block", x.nrows(), x.ncols())));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let rmax = diag.iter().copied().fold(0.0, f64::max);
    let deficient = diag.iter().filter(|&&v| !(v > 1e-12 * rmax)).count();
    if deficient > 0 || !(rmax > 0.0) {
        return Err(Error::RankDeficient { count: deficient.max(1) });
    }
    Ok(qr.q())
}

/// `||P_X - P_ref||_F` for the orthogonal projectors onto the column spans.
///
/// Evaluated as `sqrt(||(I - P_X) Q_ref||^2 + ||(I - P_ref) Q_X||^2)`, which
/// equals the projector distance but avoids the cancellation in
/// `r_X + r_ref - 2 ||Q_X^T Q_ref||^2` for nearby subspaces.
pub fn golub_werman(x: &Basis, x_ref: &Basis) -> Result<f64> {
    if x.nrows() != x_ref.nrows() {
        return Err(Error::arg(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            x_ref.nrows()
        )));
    }
    let qx = orthonormal(x)?;
    let qr = orthonormal(x_ref)?;
    let cross = qx.tr_mul(&qr);
    let a = (&qr - &qx * &cross).norm_squared();
    let b = (&qx - &qr * cross.transpose()).norm_squared();
    Ok((a + b).sqrt())
}

/// `||A X - J_n X J_p^T D||_F / ||A X||_F` with `D = diag(d) (+) diag(d)`.
pub fn residue(op: &SpdOperator, x: &Basis, d: &[f64]) -> Result<f64> {
    let p = d.len();
    if x.ncols() != 2 * p || p == 0 {
        return Err(Error::arg(format!(
            "basis has {} columns for {} eigenvalues",
            x.ncols(),
            p
        )));
    }
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::arg("eigenvalues must be positive"));
    }
    let ax = op.apply(x)?;
    let denom = ax.norm();
    if !(denom > 0.0) {
        return Err(Error::arg("A X vanishes; the basis is zero"));
    }
    // X J^T = -X J
    let mut xjt = -j_right(x)?;
    for (j, &v) in d.iter().enumerate() {
        xjt.column_mut(j).scale_mut(v);
        xjt.column_mut(j + p).scale_mut(v);
    }
    let rhs = j_left(&xjt)?;
    Ok((ax - rhs).norm() / denom)
}

/// Aggregates the metrics of a solver result, with eigenvalue and subspace
/// errors when a reference is supplied.
pub fn report(op: &SpdOperator, result: &SympEigResult, reference: Option<&ReferenceSpectrum>) -> Result<MetricsReport> {
    let residue = residue(op, &result.basis, &result.eigenvalues)?;
    let (golub_werman, abs_errors, rel_errors) = match reference {
        Some(r) => {
            let p = result.eigenvalues.len();
            if r.d.len() < p || r.x_ref.ncols() != 2 * p {
                return Err(Error::arg("reference does not cover the requested eigenvalues"));
            }
            let abs: Vec<f64> = result
                .eigenvalues
                .iter()
                .zip(&r.d)
                .map(|(a, b)| (a - b).abs())
                .collect();
            let rel = abs.iter().zip(&r.d).map(|(e, b)| e / b.abs()).collect();
            (Some(golub_werman(&result.basis, &r.x_ref)?), abs, rel)
        }
        None => (None, Vec::new(), Vec::new()),
    };
    Ok(MetricsReport {
        golub_werman,
        residue,
        feasibility: result.feasibility,
        objective: result.objective,
        abs_errors,
        rel_errors,
    })
}

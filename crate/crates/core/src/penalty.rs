//! Zero-, first- and second-order oracles of the trace-penalty function
//!
//! ```text
//! f_beta(X) = 1/2 <X, A X> + beta/4 ||C||_F^2,   C = X^T J_n X - J_p
//! grad f_beta(X) = A X - beta J_n X C
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operators::{gram_from_jx, j_left, poisson, symplectic_gram, Basis, SpdOperator};

/// Value, gradient and cached products of `f_beta` at one point.
#[derive(Clone, Debug)]
pub struct PenaltyEval {
    pub value: f64,
    pub gradient: Basis,
    /// `||X^T J_n X - J_p||_F`
    pub feasibility: f64,
    /// `1/2 <X, A X>`
    pub trace_term: f64,
    pub ax: Basis,
    /// Multiply-add count of the kernels used for this evaluation.
    pub flops: u64,
}

/// Objective value with the intermediates needed to finish the gradient.
#[derive(Clone, Debug)]
pub(crate) struct ObjectiveParts {
    pub value: f64,
    pub trace_term: f64,
    pub feasibility: f64,
    pub ax: Basis,
    jx: Basis,
    violation: DMatrix<f64>,
    pub flops: u64,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("penalty parameter must be positive, got {beta}")))
    }
}

pub(crate) fn objective_parts(op: &SpdOperator, x: &Basis, beta: f64) -> Result<ObjectiveParts> {
    check_beta(beta)?;
    if x.ncols() % 2 != 0 {
        return Err(Error::arg(format!("iterate needs an even column count, got {}", x.ncols())));
    }
    let (rows, cols) = (x.nrows() as u64, x.ncols() as u64);
    let ax = op.apply(x)?;
    let jx = j_left(x)?;
    let gram = gram_from_jx(x, &jx);
    let violation = gram - poisson(x.ncols() / 2);
    let trace_term = 0.5 * x.dot(&ax);
    let vsq = violation.norm_squared();
    let value = trace_term + 0.25 * beta * vsq;

    // AX, X^T (J X), C = G - J, <X, AX>, ||C||^2
    let flops = op.apply_cost(x.ncols()) + rows * cols * cols + cols * cols + rows * cols + cols * cols + 1;
    Ok(ObjectiveParts {
        value,
        trace_term,
        feasibility: vsq.sqrt(),
        ax,
        jx,
        violation,
        flops,
    })
}

impl ObjectiveParts {
    pub(crate) fn finish(self, beta: f64) -> PenaltyEval {
        let (rows, cols) = (self.jx.nrows() as u64, self.jx.ncols() as u64);
        let mut gradient = self.ax.clone();
        gradient.gemm(-beta, &self.jx, &self.violation, 1.0);
        PenaltyEval {
            value: self.value,
            gradient,
            feasibility: self.feasibility,
            trace_term: self.trace_term,
            ax: self.ax,
            // (J X) C and the axpy with A X
            flops: self.flops + rows * cols * cols + rows * cols,
        }
    }
}

pub fn objective(op: &SpdOperator, x: &Basis, beta: f64) -> Result<f64> {
    objective_parts(op, x, beta).map(|p| p.value)
}

pub fn grad(op: &SpdOperator, x: &Basis, beta: f64) -> Result<PenaltyEval> {
    Ok(objective_parts(op, x, beta)?.finish(beta))
}

/// Second directional derivative `d^2/dt^2 f_beta(X + tY)` at `t = 0`:
///
/// ```text
/// tr(Y^T A Y) - beta tr((Y^T J Y) C) + beta/2 ||Y^T J X + X^T J Y||_F^2
/// ```
pub fn hess_quadform(op: &SpdOperator, x: &Basis, y: &Basis, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if x.shape() != y.shape() {
        return Err(Error::arg(format!(
            "direction shape {:?} differs from iterate shape {:?}",
            y.shape(),
            x.shape()
        )));
    }
    let ay = op.apply(y)?;
    let jx = j_left(x)?;
    let jy = j_left(y)?;
    let violation = gram_from_jx(x, &jx) - poisson(x.ncols() / 2);
    let yjy = y.tr_mul(&jy);
    let cross = y.tr_mul(&jx) + x.tr_mul(&jy);
    Ok(y.dot(&ay) - beta * (yjy * violation).trace() + 0.5 * beta * cross.norm_squared())
}

/// Builds the stationary point
/// `[S1 (I - D/beta)^{1/2}, 0, S2 (I - D/beta)^{1/2}, 0] T^T`
/// from `q` symplectic eigenpairs `s_hat = [S1, S2]` (`2n x 2q`) with values
/// `d_hat`, padded to `2p` columns.
pub fn construct_stationary_point(
    s_hat: &Basis,
    d_hat: &[f64],
    p: usize,
    t: &DMatrix<f64>,
    beta: f64,
) -> Result<Basis> {
    check_beta(beta)?;
    let q = d_hat.len();
    if s_hat.ncols() != 2 * q {
        return Err(Error::arg(format!(
            "eigenpair block has {} columns, expected {}",
            s_hat.ncols(),
            2 * q
        )));
    }
    if q > p {
        return Err(Error::arg(format!("q = {q} exceeds p = {p}")));
    }
    if t.shape() != (2 * p, 2 * p) {
        return Err(Error::arg(format!("T must be {0}x{0}", 2 * p)));
    }
    let dmax = d_hat.iter().copied().fold(0.0, f64::max);
    if d_hat.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::arg("eigenvalues must be positive"));
    }
    if !(beta > dmax) {
        return Err(Error::arg(format!(
            "beta = {beta} must exceed the largest eigenvalue {dmax}"
        )));
    }
    let mut x = Basis::zeros(s_hat.nrows(), 2 * p);
    for (j, &d) in d_hat.iter().enumerate() {
        let w = (1.0 - d / beta).sqrt();
        x.column_mut(j).copy_from(&(s_hat.column(j) * w));
        x.column_mut(p + j).copy_from(&(s_hat.column(q + j) * w));
    }
    Ok(x * t.transpose())
}

/// `W = -X^T J_n X J_p`; symmetric PSD with `||W||_2 <= 1` at stationary points.
pub fn stationary_w(x: &Basis) -> Result<DMatrix<f64>> {
    let g = symplectic_gram(x)?;
    Ok(-(g * poisson(x.ncols() / 2)))
}

#[cfg(test)]
mod tests {
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::operators::{canonical_frame, random_block};

    fn diag_2_8() -> SpdOperator {
        SpdOperator::dense(DMatrix::from_diagonal(&dvector![2.0, 8.0])).unwrap()
    }

    fn fixture_point() -> Basis {
        DMatrix::from_diagonal(&dvector![2f64.sqrt(), 1.0 / 2f64.sqrt()]) * 0.6f64.sqrt()
    }

    #[test]
    fn objective_at_zero() {
        let op = SpdOperator::dense(DMatrix::identity(6, 6)).unwrap();
        for (p, beta) in [(1usize, 3.0), (2, 0.5), (3, 10.0)] {
            let f = objective(&op, &Basis::zeros(6, 2 * p), beta).unwrap();
            assert!((f - beta * p as f64 / 2.0).abs() < 1e-15);
            let g = grad(&op, &Basis::zeros(6, 2 * p), beta).unwrap();
            assert_eq!(g.gradient.norm(), 0.0);
        }
    }

    #[test]
    fn objective_of_feasible_frame_under_identity() {
        let op = SpdOperator::dense(DMatrix::identity(8, 8)).unwrap();
        let f = objective(&op, &canonical_frame(4, 3), 7.0).unwrap();
        assert!((f - 3.0).abs() < 1e-15);
    }

    #[test]
    fn global_value_fixture() {
        // d = 4, beta = 10: d - d^2 / (2 beta) = 3.2
        let op = diag_2_8();
        let x = fixture_point();
        let f = objective(&op, &x, 10.0).unwrap();
        assert!((f - 3.2).abs() < 1e-14);
        // term by term: 1/2 tr(X^T A X) = 0.5 * 0.6 * (2*2 + 8/2) = 2.4,
        // C = 0.6 J - J = -0.4 J, beta/4 * 2 * 0.16 = 0.8
        let g = grad(&op, &x, 10.0).unwrap();
        assert!((g.trace_term - 2.4).abs() < 1e-14);
        assert!((g.feasibility - 0.4 * 2f64.sqrt()).abs() < 1e-14);
        assert!(g.gradient.norm() < 1e-12);
        assert_eq!(g.value, f);
    }

    #[test]
    fn beta_must_be_positive() {
        let op = diag_2_8();
        assert!(objective(&op, &fixture_point(), 0.0).is_err());
        assert!(grad(&op, &fixture_point(), -1.0).is_err());
    }

    #[test]
    fn hessian_small_cases() {
        let op = SpdOperator::dense(DMatrix::identity(6, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_block(6, 4, &mut rng);
        assert_eq!(hess_quadform(&op, &x, &Basis::zeros(6, 4), 2.0).unwrap(), 0.0);

        // feasible canonical frame, Y = X, A = I: 2p + 4 beta p
        let (p, beta) = (2usize, 3.0);
        let x = canonical_frame(3, p);
        let h = hess_quadform(&op, &x, &x, beta).unwrap();
        assert!((h - (2.0 * p as f64 + 4.0 * beta * p as f64)).abs() < 1e-12);
        assert!(hess_quadform(&op, &x, &Basis::zeros(6, 2), beta).is_err());
    }

    #[test]
    fn stationary_point_requires_beta_above_spectrum() {
        let s = fixture_point() / 0.6f64.sqrt();
        let t = DMatrix::identity(2, 2);
        assert!(construct_stationary_point(&s, &[4.0], 1, &t, 4.0).is_err());
        let x = construct_stationary_point(&s, &[4.0], 1, &t, 10.0).unwrap();
        assert!((x - fixture_point()).norm() < 1e-15);
    }

    #[test]
    fn flop_count_matches_cost_model_for_dense() {
        let (n, p) = (10usize, 2usize);
        let op = SpdOperator::dense(DMatrix::identity(2 * n, 2 * n)).unwrap();
        let g = grad(&op, &canonical_frame(n, p), 1.0).unwrap();
        let model = (4 * n * n) as u64 * (2 * p) as u64 + (16 * n * p * p) as u64;
        let extra = (8 * n * p + 8 * p * p + 1) as u64;
        assert_eq!(g.flops, model + extra);
    }
}

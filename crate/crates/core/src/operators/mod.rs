//! Matrix-free representations of the SPD matrix `A` and exact kernels for
//! the Poisson matrices `J_k = [[0, I_k], [-I_k, 0]]`.
//!
//! `J_k` is never formed. Left and right products are row/column
//! permutations with a sign flip, so they cost `O(rows * cols)`.

mod csr;
mod mmio;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

pub use csr::CsrMatrix;
pub use mmio::{
    load_matrix, read_matrix_market, store_matrix, store_matrix_with_comment, write_matrix_market,
    write_matrix_market_with_comment, MatrixMarket,
};

use crate::error::{Error, Result};

/// Dense `2n x 2p` column block: iterates, eigenbases and search directions.
pub type Basis = DMatrix<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Dense,
    SparseCsr,
    SparsePlusLowRank,
}

/// The SPD matrix `A` of size `2n x 2n`. Immutable once built.
#[derive(Clone, Debug)]
pub enum SpdOperator {
    Dense(DMatrix<f64>),
    SparseCsr(CsrMatrix),
    /// `A = B + C C^T` kept in factored form.
    SparsePlusLowRank { sparse: CsrMatrix, factor: DMatrix<f64> },
}

impl SpdOperator {
    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        check_square_even(m.nrows(), m.ncols())?;
        Ok(SpdOperator::Dense(m))
    }

    pub fn sparse(m: CsrMatrix) -> Result<Self> {
        check_square_even(m.nrows(), m.ncols())?;
        Ok(SpdOperator::SparseCsr(m))
    }

    pub fn sparse_plus_low_rank(sparse: CsrMatrix, factor: DMatrix<f64>) -> Result<Self> {
        check_square_even(sparse.nrows(), sparse.ncols())?;
        if factor.nrows() != sparse.nrows() {
            return Err(Error::arg(format!(
                "low-rank factor has {} rows, sparse part has {}",
                factor.nrows(),
                sparse.nrows()
            )));
        }
        Ok(SpdOperator::SparsePlusLowRank { sparse, factor })
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            SpdOperator::Dense(_) => OperatorKind::Dense,
            SpdOperator::SparseCsr(_) => OperatorKind::SparseCsr,
            SpdOperator::SparsePlusLowRank { .. } => OperatorKind::SparsePlusLowRank,
        }
    }

    /// Full dimension `2n`.
    pub fn dim(&self) -> usize {
        match self {
            SpdOperator::Dense(m) => m.nrows(),
            SpdOperator::SparseCsr(m) => m.nrows(),
            SpdOperator::SparsePlusLowRank { sparse, .. } => sparse.nrows(),
        }
    }

    /// Half dimension `n`.
    pub fn half_dim(&self) -> usize {
        self.dim() / 2
    }

    /// Stored nonzeros of the explicit part (all entries for dense).
    pub fn nnz(&self) -> usize {
        match self {
            SpdOperator::Dense(m) => m.len(),
            SpdOperator::SparseCsr(m) => m.nnz(),
            SpdOperator::SparsePlusLowRank { sparse, .. } => sparse.nnz(),
        }
    }

    /// Computes `A X`. The low-rank variant evaluates `B X + C (C^T X)`.
    pub fn apply(&self, x: &Basis) -> Result<Basis> {
        if x.nrows() != self.dim() {
            return Err(Error::arg(format!(
                "operator of dimension {} applied to a block with {} rows",
                self.dim(),
                x.nrows()
            )));
        }
        if x.ncols() > self.dim() {
            return Err(Error::arg(format!(
                "block has {} columns, more than the operator dimension {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(match self {
            SpdOperator::Dense(m) => m * x,
            SpdOperator::SparseCsr(m) => m.mul_dense(x),
            SpdOperator::SparsePlusLowRank { sparse, factor } => {
                let mut out = sparse.mul_dense(x);
                let ctx = factor.tr_mul(x);
                out.gemm(1.0, factor, &ctx, 1.0);
                out
            }
        })
    }

    /// Multiply-add count of `apply` on a block with `cols` columns.
    pub fn apply_cost(&self, cols: usize) -> u64 {
        let cols = cols as u64;
        match self {
            SpdOperator::Dense(m) => (m.len() as u64) * cols,
            SpdOperator::SparseCsr(m) => (m.nnz() as u64) * cols,
            SpdOperator::SparsePlusLowRank { sparse, factor } => {
                (sparse.nnz() as u64 + 2 * factor.len() as u64) * cols
            }
        }
    }

    /// `tr(A)`, from the stored diagonal plus squared row norms of `C`.
    pub fn trace(&self) -> f64 {
        match self {
            SpdOperator::Dense(m) => m.trace(),
            SpdOperator::SparseCsr(m) => m.diagonal().iter().sum(),
            SpdOperator::SparsePlusLowRank { sparse, factor } => {
                sparse.diagonal().iter().sum::<f64>() + factor.norm_squared()
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SpdOperator::Dense(m) => m.clone(),
            SpdOperator::SparseCsr(m) => m.to_dense(),
            SpdOperator::SparsePlusLowRank { sparse, factor } => {
                let mut d = sparse.to_dense();
                d.gemm(1.0, factor, &factor.transpose(), 1.0);
                d
            }
        }
    }

    /// Worst relative defect `|<u, A v> - <v, A u>| / (||A u|| ||v||)` over
    /// random probe pairs.
    pub fn symmetry_defect<R: Rng>(&self, probes: usize, rng: &mut R) -> f64 {
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let u = random_block(dim, 1, rng);
            let v = random_block(dim, 1, rng);
            let au = self.apply(&u).expect("shapes match");
            let av = self.apply(&v).expect("shapes match");
            let defect = (u.dot(&av) - v.dot(&au)).abs();
            let scale = au.norm() * v.norm();
            if scale > 0.0 {
                worst = worst.max(defect / scale);
            }
        }
        worst
    }

    /// Positive-definiteness check. Dense Cholesky when `2n <= dense_limit`,
    /// otherwise `<u, A u> > 0` on random probes.
    pub fn check_spd<R: Rng>(&self, dense_limit: usize, probes: usize, rng: &mut R) -> SpdCheck {
        if self.dim() <= dense_limit {
            let mut dense = self.to_dense();
            let asym = (&dense - dense.transpose()).abs().max();
            dense = (&dense + dense.transpose()) * 0.5;
            let scale = dense.abs().max().max(1.0);
            let positive = dense.cholesky().is_some();
            SpdCheck {
                method: "cholesky",
                positive_definite: positive,
                symmetric: asym <= 1e-12 * scale,
                detail: asym,
            }
        } else {
            let mut min_ratio = f64::INFINITY;
            for _ in 0..probes {
                let u = random_block(self.dim(), 1, rng);
                let au = self.apply(&u).expect("shapes match");
                min_ratio = min_ratio.min(u.dot(&au) / u.norm_squared());
            }
            let defect = self.symmetry_defect(probes, rng);
            SpdCheck {
                method: "probes",
                positive_definite: min_ratio > 0.0,
                symmetric: defect <= 1e-12,
                detail: min_ratio,
            }
        }
    }
}

/// Outcome of [`SpdOperator::check_spd`].
#[derive(Clone, Debug, Serialize)]
pub struct SpdCheck {
    pub method: &'static str,
    pub positive_definite: bool,
    pub symmetric: bool,
    /// Max asymmetry for the dense path, min Rayleigh quotient for probes.
    pub detail: f64,
}

fn check_square_even(rows: usize, cols: usize) -> Result<()> {
    if rows != cols {
        return Err(Error::arg(format!("matrix is {rows}x{cols}, expected square")));
    }
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::arg(format!(
            "matrix dimension {rows} must be even and positive"
        )));
    }
    Ok(())
}

pub(crate) fn random_block<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| 2.0 * rng.gen::<f64>() - 1.0)
}

/// `J_k X` where `X` has `2k` rows: top half becomes the bottom half, bottom
/// half becomes the negated top half.
pub fn j_left(x: &Basis) -> Result<Basis> {
    let rows = x.nrows();
    if rows % 2 != 0 {
        return Err(Error::arg(format!("J_k X needs an even row count, got {rows}")));
    }
    let k = rows / 2;
    Ok(Basis::from_fn(rows, x.ncols(), |i, j| {
        if i < k {
            x[(i + k, j)]
        } else {
            -x[(i - k, j)]
        }
    }))
}

/// `X J_p` where `X` has `2p` columns: `[X1, X2] J_p = [-X2, X1]`.
pub fn j_right(x: &Basis) -> Result<Basis> {
    let cols = x.ncols();
    if cols % 2 != 0 {
        return Err(Error::arg(format!(
            "X J_p needs an even column count, got {cols}"
        )));
    }
    let p = cols / 2;
    let mut out = Basis::zeros(x.nrows(), cols);
    for j in 0..p {
        out.column_mut(j).copy_from(&(-x.column(j + p)));
        out.column_mut(j + p).copy_from(&x.column(j));
    }
    Ok(out)
}

/// `X^T J_n X`, skew-symmetrized as `(G - G^T) / 2`.
pub fn symplectic_gram(x: &Basis) -> Result<DMatrix<f64>> {
    let jx = j_left(x)?;
    Ok(gram_from_jx(x, &jx))
}

pub(crate) fn gram_from_jx(x: &Basis, jx: &Basis) -> DMatrix<f64> {
    let g = x.tr_mul(jx);
    skew_part(&g)
}

pub(crate) fn skew_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

pub(crate) fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Dense `J_k`. Only for tests, oracles and small factorizations.
pub fn poisson(k: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        j[(i, i + k)] = 1.0;
        j[(i + k, i)] = -1.0;
    }
    j
}

/// Columns `1..p` and `n+1..n+p` of `I_{2n}`.
pub fn canonical_frame(n: usize, p: usize) -> Basis {
    let mut x = Basis::zeros(2 * n, 2 * p);
    for i in 0..p {
        x[(i, i)] = 1.0;
        x[(n + i, p + i)] = 1.0;
    }
    x
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn identity_and_diagonal_apply() {
        let op = SpdOperator::dense(DMatrix::identity(4, 4)).unwrap();
        let x = random_block(4, 2, &mut rng());
        assert_eq!(op.apply(&x).unwrap(), x);

        let op = SpdOperator::dense(DMatrix::from_diagonal(&nalgebra::dvector![2.0, 8.0])).unwrap();
        let e1 = Basis::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(op.apply(&e1).unwrap().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn csr_apply_matches_dense() {
        let mut r = rng();
        let d = random_block(8, 8, &mut r).map(|v| if v.abs() < 0.5 { 0.0 } else { v });
        let d = &d + d.transpose();
        let op = SpdOperator::sparse(CsrMatrix::from_dense(&d)).unwrap();
        let x = random_block(8, 4, &mut r);
        assert!((op.apply(&x).unwrap() - &d * &x).abs().max() < 1e-12);
    }

    #[test]
    fn low_rank_apply_matches_densified() {
        let mut r = rng();
        let b = CsrMatrix::identity(6).shifted(1.0);
        let c = random_block(6, 2, &mut r);
        let op = SpdOperator::sparse_plus_low_rank(b, c).unwrap();
        let x = random_block(6, 2, &mut r);
        let dense = op.to_dense();
        let rel = (op.apply(&x).unwrap() - &dense * &x).norm() / (&dense * &x).norm();
        assert!(rel < 1e-12);
        assert!((op.trace() - dense.trace()).abs() < 1e-12);
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let op = SpdOperator::dense(DMatrix::identity(4, 4)).unwrap();
        assert!(matches!(op.apply(&Basis::zeros(3, 1)), Err(Error::Argument(_))));
    }

    #[test]
    fn constructors_reject_bad_shapes() {
        assert!(SpdOperator::dense(DMatrix::identity(3, 3)).is_err());
        assert!(SpdOperator::dense(DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn j_left_small_cases() {
        let e1 = Basis::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(j_left(&e1).unwrap().as_slice(), &[0.0, -1.0]);
        let x = random_block(6, 3, &mut rng());
        assert_eq!(j_left(&j_left(&x).unwrap()).unwrap(), -&x);
        // J^T X = -J X
        assert_eq!(poisson(3).transpose() * &x, -j_left(&x).unwrap());
        assert!(j_left(&Basis::zeros(3, 1)).is_err());
    }

    #[test]
    fn j_right_small_cases() {
        assert_eq!(j_right(&Basis::identity(2, 2)).unwrap(), poisson(1));
        let x = random_block(6, 4, &mut rng());
        assert_eq!(j_right(&j_right(&x).unwrap()).unwrap(), -&x);
        assert!((j_right(&x).unwrap() - &x * poisson(2)).abs().max() < 1e-14);
        assert!(j_right(&Basis::zeros(2, 3)).is_err());
    }

    #[test]
    fn gram_of_canonical_frame_is_poisson() {
        assert_eq!(symplectic_gram(&canonical_frame(5, 2)).unwrap(), poisson(2));
        assert_eq!(symplectic_gram(&Basis::zeros(6, 4)).unwrap(), DMatrix::zeros(4, 4));
        let x = random_block(8, 4, &mut rng());
        let dense = skew_part(&(x.transpose() * poisson(4) * &x));
        assert!((symplectic_gram(&x).unwrap() - dense).abs().max() < 1e-13);
    }

    #[test]
    fn spd_check_detects_indefinite() {
        let mut r = rng();
        let good = SpdOperator::dense(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0])).unwrap();
        assert!(good.check_spd(100, 4, &mut r).positive_definite);
        let bad = SpdOperator::dense(DMatrix::from_diagonal(&nalgebra::dvector![1.0, -2.0])).unwrap();
        assert!(!bad.check_spd(100, 4, &mut r).positive_definite);
        assert!(!bad.check_spd(0, 64, &mut r).positive_definite);
    }
}

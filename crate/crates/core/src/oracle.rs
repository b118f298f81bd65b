//! Dense reference spectra and random symplectic test matrices.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::williamson_small;
use crate::operators::{canonical_frame, j_left, poisson, random_block, sym_part, Basis, SpdOperator};

/// Largest matrix dimension `2n` the dense reference will densify.
pub const DENSE_BUDGET: usize = 4000;

/// Full Williamson form of a densified operator.
#[derive(Clone, Debug, Serialize)]
pub struct ReferenceSpectrum {
    /// All `n` symplectic eigenvalues, ascending.
    pub d: Vec<f64>,
    #[serde(skip)]
    pub s_full: DMatrix<f64>,
    pub p: usize,
    /// Columns `1..p` and `n+1..n+p` of `s_full`.
    #[serde(skip)]
    pub x_ref: Basis,
}

impl ReferenceSpectrum {
    pub fn from_williamson(s_full: DMatrix<f64>, d: Vec<f64>, p: usize) -> Result<Self> {
        let n = d.len();
        if s_full.shape() != (2 * n, 2 * n) || p == 0 || p > n {
            return Err(Error::arg(format!(
                "reference needs a {0}x{0} basis and 1 <= p <= {1}",
                2 * n,
                n
            )));
        }
        let x_ref = select_pairs(&s_full, n, p);
        Ok(Self { d, s_full, p, x_ref })
    }

    /// The `p` smallest eigenvalues.
    pub fn leading(&self) -> &[f64] {
        &self.d[..self.p]
    }

    pub fn with_p(&self, p: usize) -> Result<Self> {
        Self::from_williamson(self.s_full.clone(), self.d.clone(), p)
    }
}

fn select_pairs(s: &DMatrix<f64>, n: usize, p: usize) -> Basis {
    let mut x = Basis::zeros(s.nrows(), 2 * p);
    for j in 0..p {
        x.column_mut(j).copy_from(&s.column(j));
        x.column_mut(p + j).copy_from(&s.column(n + j));
    }
    x
}

/// Densifies `op` and computes its full Williamson form.
pub fn reference(op: &SpdOperator, p: usize) -> Result<ReferenceSpectrum> {
    if op.dim() > DENSE_BUDGET {
        return Err(Error::Budget {
            dim: op.dim(),
            limit: DENSE_BUDGET,
        });
    }
    let w = williamson_small(&op.to_dense())?;
    ReferenceSpectrum::from_williamson(w.s, w.d, p)
}

/// Symplectic eigenvalues as `|Im|` of the eigenvalues of `J M`, ascending.
/// Independent of the symmetric-root route used by [`williamson_small`].
pub fn spectrum_via_eig(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let jm = j_left(m)?;
    let mut ims: Vec<f64> = jm
        .complex_eigenvalues()
        .iter()
        .map(|z| z.im)
        .filter(|&v| v > 0.0)
        .collect();
    if ims.len() != m.nrows() / 2 {
        return Err(Error::Numerical(format!(
            "expected {} eigenvalues with positive imaginary part, found {}",
            m.nrows() / 2,
            ims.len()
        )));
    }
    ims.sort_by(f64::total_cmp);
    Ok(ims)
}

/// Spectral norm of a dense matrix.
fn norm2(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// `exp(J_n H)` for a random symmetric `H`, scaled so that `||J_n H||_2 = radius`.
pub fn random_symplectic_matrix<R: Rng>(n: usize, radius: f64, rng: &mut R) -> DMatrix<f64> {
    let h = sym_part(&random_block(2 * n, 2 * n, rng));
    let jh = j_left(&h).expect("even dimension");
    let nrm = norm2(&jh);
    let jh = if nrm > 0.0 { jh * (radius / nrm) } else { jh };
    jh.exp()
}

/// `exp(J_n H)` applied to the canonical frame: a random point of `Sp(2p, 2n)`.
pub fn random_symplectic_frame<R: Rng>(n: usize, p: usize, rng: &mut R) -> Basis {
    random_symplectic_matrix(n, 2.0, rng) * canonical_frame(n, p)
}

/// `exp([[A, B], [-B, A]])` with `A` skew and `B` symmetric: orthogonal and
/// symplectic.
pub fn random_orthosymplectic<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let a = random_block(p, p, rng);
    let a = (&a - a.transpose()) * 0.5;
    let b = sym_part(&random_block(p, p, rng));
    let mut w = DMatrix::zeros(2 * p, 2 * p);
    w.view_mut((0, 0), (p, p)).copy_from(&a);
    w.view_mut((p, p), (p, p)).copy_from(&a);
    w.view_mut((0, p), (p, p)).copy_from(&b);
    w.view_mut((p, 0), (p, p)).copy_from(&(-b));
    w.exp()
}

/// `||S^T J S - J||_F` for a square or tall `S` with an even column count.
pub fn symplectic_defect(s: &DMatrix<f64>) -> f64 {
    let js = j_left(s).expect("even row count");
    (s.tr_mul(&js) - poisson(s.ncols() / 2)).norm()
}

#[cfg(test)]
mod tests {
    use nalgebra::{dvector, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn diagonal_reference() {
        let n = 5;
        let vals: Vec<f64> = (1..=n).chain(1..=n).map(|v| v as f64).collect();
        let op = SpdOperator::dense(DMatrix::from_diagonal(&DVector::from_vec(vals))).unwrap();
        let r = reference(&op, 2).unwrap();
        for (i, d) in r.d.iter().enumerate() {
            assert!((d - (i + 1) as f64).abs() < 1e-12);
        }
        // columns are signed canonical vectors
        let c = canonical_frame(n, 2);
        for j in 0..4 {
            assert!((r.x_ref.column(j).dot(&c.column(j)).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_reference() {
        let op = SpdOperator::dense(DMatrix::from_diagonal(&dvector![2.0, 8.0])).unwrap();
        let r = reference(&op, 1).unwrap();
        assert!((r.d[0] - 4.0).abs() < 1e-13);
        let e = spectrum_via_eig(&op.to_dense()).unwrap();
        assert!((e[0] - 4.0).abs() < 1e-13);
    }

    #[test]
    fn budget_is_enforced() {
        let op = SpdOperator::sparse(crate::CsrMatrix::identity(DENSE_BUDGET + 2)).unwrap();
        assert!(matches!(reference(&op, 1), Err(Error::Budget { .. })));
    }

    #[test]
    fn random_symplectic_constructions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_symplectic_matrix(4, 2.0, &mut rng);
        assert!(symplectic_defect(&s) < 1e-12);
        let x = random_symplectic_frame(5, 2, &mut rng);
        assert!(symplectic_defect(&x) < 1e-12);
        let t = random_orthosymplectic(3, &mut rng);
        assert!(symplectic_defect(&t) < 1e-13);
        assert!((t.tr_mul(&t) - DMatrix::identity(6, 6)).norm() < 1e-13);
    }
}

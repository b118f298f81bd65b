//! Seeded generators for the test matrix families.
//!
//! Every call draws from ChaCha20 seeded with the user seed, on a stream
//! chosen by the family, so `(family, n, seed, ...)` fixes the output bit for
//! bit. Uniform `[-1, 1]` values are `2u - 1` with `u` built from 53 random
//! mantissa bits.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{random_block, sym_part, CsrMatrix, SpdOperator};
use crate::oracle::{random_symplectic_matrix, ReferenceSpectrum, DENSE_BUDGET};

/// Default low-rank width.
pub const DEFAULT_WIDTH: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dense,
    Sparse,
    #[serde(rename = "slr")]
    SparsePlusLowRank,
    Prescribed,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Dense,
        Family::Sparse,
        Family::SparsePlusLowRank,
        Family::Prescribed,
    ];

    fn stream(self) -> u64 {
        match self {
            Family::Dense => 1,
            Family::Sparse => 2,
            Family::SparsePlusLowRank => 3,
            Family::Prescribed => 4,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Dense => "dense",
            Family::Sparse => "sparse",
            Family::SparsePlusLowRank => "slr",
            Family::Prescribed => "prescribed",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Family::Dense),
            "sparse" => Ok(Family::Sparse),
            "slr" | "sparse_plus_low_rank" => Ok(Family::SparsePlusLowRank),
            "prescribed" => Ok(Family::Prescribed),
            other => Err(Error::arg(format!(
                "unknown family `{other}` (expected dense, sparse, slr or prescribed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    /// Fraction of nonzeros in the `2n x 2n` sparse part; default `10 / n`
    /// capped at 1.
    pub density: Option<f64>,
    pub width: usize,
    pub seed: u64,
    /// Prescribed symplectic eigenvalues; default `1..=n`.
    pub spectrum: Option<Vec<f64>>,
}

impl GeneratorSpec {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        Self {
            family,
            n,
            density: None,
            width: DEFAULT_WIDTH,
            seed,
            spectrum: None,
        }
    }

    pub fn resolved_density(&self) -> f64 {
        self.density.unwrap_or_else(|| (10.0 / self.n.max(1) as f64).min(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::arg("n must be positive"));
        }
        let sigma = self.resolved_density();
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::arg(format!("density must lie in (0, 1], got {sigma}")));
        }
        if self.width == 0 {
            return Err(Error::arg("low-rank width must be at least 1"));
        }
        if let Some(d) = &self.spectrum {
            if d.len() != self.n || d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::arg(format!("spectrum needs {} positive values", self.n)));
            }
        }
        Ok(())
    }
}

/// Generator output. `reference` is known exactly only for the prescribed
/// family.
#[derive(Clone, Debug)]
pub struct Generated {
    pub spec: GeneratorSpec,
    pub op: SpdOperator,
    pub reference: Option<ReferenceSpectrum>,
}

pub fn rng_for(family: Family, seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(family.stream());
    rng
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let (op, reference) = match spec.family {
        Family::Dense => (gen_dense(spec.n, spec.seed)?, None),
        Family::Sparse => (gen_sparse(spec.n, spec.resolved_density(), spec.seed)?, None),
        Family::SparsePlusLowRank => (
            gen_slr(spec.n, spec.resolved_density(), spec.width, spec.seed)?,
            None,
        ),
        Family::Prescribed => {
            let d: Vec<f64> = match &spec.spectrum {
                Some(d) => d.clone(),
                None => (1..=spec.n).map(|i| i as f64).collect(),
            };
            let (op, r) = gen_prescribed(spec.n, &d, spec.seed)?;
            (op, Some(r))
        }
    };
    Ok(Generated {
        spec: spec.clone(),
        op,
        reference,
    })
}

/// Affine map `c x + shift` sending `(lo, hi)` to `(1, n)`.
fn rescale_coefficients(lo: f64, hi: f64, n: usize) -> Result<(f64, f64)> {
    if !(hi - lo > f64::EPSILON * hi.abs().max(1.0)) {
        return Err(Error::Numerical(format!(
            "degenerate spectrum: extreme eigenvalues {lo} and {hi} coincide"
        )));
    }
    let c = (n as f64 - 1.0) / (hi - lo);
    Ok((c, 1.0 - c * lo))
}

/// `c N N^T + shift I` with `N_ij ~ U[-1, 1]`, rescaled so the extreme
/// eigenvalues are `1` and `n`.
pub fn gen_dense(n: usize, seed: u64) -> Result<SpdOperator> {
    if 2 * n > DENSE_BUDGET {
        return Err(Error::Budget {
            dim: 2 * n,
            limit: DENSE_BUDGET,
        });
    }
    let mut rng = rng_for(Family::Dense, seed);
    let nn = random_block(2 * n, 2 * n, &mut rng);
    let a = sym_part(&(&nn * nn.transpose()));
    let ev = a.symmetric_eigenvalues();
    let (c, shift) = rescale_coefficients(ev.min(), ev.max(), n)?;
    let mut a = a * c;
    for i in 0..2 * n {
        a[(i, i)] += shift;
    }
    SpdOperator::dense(a)
}

/// Extreme eigenvalues of a symmetric sparse matrix.
pub fn sparse_extremes(m: &CsrMatrix, seed: u64) -> (f64, f64) {
    if m.nrows() <= DENSE_BUDGET {
        let ev = m.to_dense().symmetric_eigenvalues();
        return (ev.min(), ev.max());
    }
    let hi = power_iteration(m, 0.0, seed);
    // largest eigenvalue of hi I - M is hi - lambda_min
    let lo = hi - power_iteration(m, hi, seed ^ 0x5eed);
    (lo, hi)
}

/// Dominant eigenvalue of `shift I - M` (or of `M` when `shift = 0`) by
/// power iteration with a `1e-6` relative stopping test.
fn power_iteration(m: &CsrMatrix, shift: f64, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dim = m.nrows();
    let mut v = DMatrix::from_fn(dim, 1, |_, _| rng.gen::<f64>() - 0.5);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let mv = m.mul_dense(&v);
        let w = if shift == 0.0 { mv } else { &v * shift - mv };
        let next = v.dot(&w);
        let nrm = w.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        v = w / nrm;
        if (next - lambda).abs() <= 1e-6 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

fn random_sparse_symmetric<R: Rng>(n: usize, density: f64, rng: &mut R) -> Result<CsrMatrix> {
    let dim = 2 * n;
    let total = (dim * dim) as f64;
    if density * total < dim as f64 {
        return Err(Error::arg(format!(
            "density {density} leaves fewer than one entry per row"
        )));
    }
    let count = (0.5 * density * total).round() as usize;
    let mut triplets = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let i = rng.gen_range(0..dim);
        let j = rng.gen_range(0..dim);
        let v: f64 = rng.gen();
        triplets.push((i, j, 0.5 * v));
        triplets.push((j, i, 0.5 * v));
    }
    CsrMatrix::from_triplets(dim, dim, triplets)
}

fn sparse_body<R: Rng>(n: usize, density: f64, rng: &mut R, seed: u64) -> Result<CsrMatrix> {
    let r = random_sparse_symmetric(n, density, rng)?;
    let (lo, hi) = sparse_extremes(&r, seed);
    let (c, shift) = rescale_coefficients(lo, hi, n)?;
    let mut b = r.shifted(shift / c);
    b.scale(c);
    Ok(b)
}

/// `sym(R)` for a random `R` with density `density / 2` and `U[0, 1)` values,
/// shifted and scaled so the extreme eigenvalues are `1` and `n`.
pub fn gen_sparse(n: usize, density: f64, seed: u64) -> Result<SpdOperator> {
    let mut rng = rng_for(Family::Sparse, seed);
    SpdOperator::sparse(sparse_body(n, density, &mut rng, seed)?)
}

/// `B + C C^T` with `B` as in [`gen_sparse`] and `C` (`2n x width`, uniform
/// `[-1, 1]`) scaled so that `sigma_max(C C^T) = n`.
pub fn gen_slr(n: usize, density: f64, width: usize, seed: u64) -> Result<SpdOperator> {
    if width == 0 {
        return Err(Error::arg("low-rank width must be at least 1"));
    }
    let mut rng = rng_for(Family::SparsePlusLowRank, seed);
    let b = sparse_body(n, density, &mut rng, seed)?;
    let c = random_block(2 * n, width, &mut rng);
    let smax = c.singular_values().max();
    if !(smax > 0.0) {
        return Err(Error::Numerical("low-rank factor vanished".into()));
    }
    SpdOperator::sparse_plus_low_rank(b, c * ((n as f64).sqrt() / smax))
}

/// `A = S^{-T} (D (+) D) S^{-1}` for a random symplectic `S = exp(J H)`; the
/// exact Williamson form comes back as the reference.
pub fn gen_prescribed(n: usize, d: &[f64], seed: u64) -> Result<(SpdOperator, ReferenceSpectrum)> {
    if d.len() != n || n == 0 {
        return Err(Error::arg(format!("need {n} prescribed eigenvalues, got {}", d.len())));
    }
    if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::arg("prescribed eigenvalues must be positive"));
    }
    if 2 * n > DENSE_BUDGET {
        return Err(Error::Budget {
            dim: 2 * n,
            limit: DENSE_BUDGET,
        });
    }
    let mut rng = rng_for(Family::Prescribed, seed);
    let s = random_symplectic_matrix(n, 2.0, &mut rng);
    let s_inv = s
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("symplectic factor is singular".into()))?;
    let dd = DVector::from_iterator(2 * n, d.iter().chain(d.iter()).copied());
    let mut scaled = s_inv.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= dd[i];
    }
    let a = sym_part(&(s_inv.transpose() * scaled));

    // ascending order, moving both columns of each pair together
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let mut s_sorted = DMatrix::zeros(2 * n, 2 * n);
    for (slot, &j) in order.iter().enumerate() {
        s_sorted.column_mut(slot).copy_from(&s.column(j));
        s_sorted.column_mut(n + slot).copy_from(&s.column(n + j));
    }
    let d_sorted = order.iter().map(|&j| d[j]).collect();
    let reference = ReferenceSpectrum::from_williamson(s_sorted, d_sorted, 1.min(n))?;
    Ok((SpdOperator::dense(a)?, reference))
}

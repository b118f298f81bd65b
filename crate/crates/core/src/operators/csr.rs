use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Symmetric matrices store both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return Err(Error::arg("row offsets must have nrows + 1 entries starting at 0"));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::arg("row offsets must be non-decreasing"));
        }
        let nnz = *row_offsets.last().unwrap();
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(Error::arg("column index and value arrays must have nnz entries"));
        }
        if col_indices.iter().any(|&c| c >= ncols) {
            return Err(Error::arg("column index out of bounds"));
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a CSR matrix from (row, col, value) triplets. Duplicates are summed,
    /// explicit zeros are kept.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(Error::arg(format!(
                "entry ({r}, {c}) outside a {nrows}x{ncols} matrix"
            )));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..nrows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let triplets = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .filter(|&(i, j)| m[(i, j)] != 0.0)
            .map(|(i, j)| (i, j, m[(i, j)]));
        Self::from_triplets(m.nrows(), m.ncols(), triplets).expect("indices are in range")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).expect("indices are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_offsets[i]..self.row_offsets[i + 1])
                .map(move |idx| (i, self.col_indices[idx], self.values[idx]))
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.nrows.min(self.ncols)];
        for (i, j, v) in self.triplets() {
            if i == j {
                diag[i] += v;
            }
        }
        diag
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Returns `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let n = self.nrows.min(self.ncols);
        let triplets = self.triplets().chain((0..n).map(|i| (i, i, shift)));
        Self::from_triplets(self.nrows, self.ncols, triplets).expect("indices are in range")
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.triplets().map(|(i, j, v)| (j, i, v));
        Self::from_triplets(self.ncols, self.nrows, triplets).expect("indices are in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Computes `self * x` column by column with a fixed summation order.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, x.nrows(), "CSR product dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        let xs = x.as_slice();
        let rows_in = x.nrows();
        for (col_in, col_out) in xs
            .chunks_exact(rows_in.max(1))
            .zip(out.as_mut_slice().chunks_exact_mut(self.nrows.max(1)))
        {
            for (i, o) in col_out.iter_mut().enumerate() {
                let range = self.row_offsets[i]..self.row_offsets[i + 1];
                *o = self.col_indices[range.clone()]
                    .iter()
                    .zip(&self.values[range])
                    .map(|(&c, &v)| v * col_in[c])
                    .sum();
            }
        }
        out
    }

    /// Largest absolute difference between an entry and its mirror.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - t.get(i, j)).abs());
        }
        worst
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }
}

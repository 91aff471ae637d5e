//! Compressed sparse column storage used by the QP engine.

use super::QpError;

/// A sparse matrix in compressed sparse column format.
///
/// Row indices within each column are strictly increasing and explicit
/// entries are never merged away, so structural zeros survive value updates.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    colptr: Vec<usize>,
    rowval: Vec<usize>,
    nzval: Vec<f64>,
}

impl CscMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        colptr: Vec<usize>,
        rowval: Vec<usize>,
        nzval: Vec<f64>,
    ) -> Result<Self, QpError> {
        if colptr.len() != ncols + 1 || colptr[0] != 0 || rowval.len() != nzval.len() {
            return Err(QpError::DimensionMismatch("malformed CSC arrays".into()));
        }
        if *colptr.last().unwrap() != rowval.len() {
            return Err(QpError::DimensionMismatch(
                "colptr does not cover rowval".into(),
            ));
        }
        for j in 0..ncols {
            if colptr[j] > colptr[j + 1] {
                return Err(QpError::DimensionMismatch("colptr not monotone".into()));
            }
            let col = &rowval[colptr[j]..colptr[j + 1]];
            if col.iter().any(|&i| i >= nrows) || col.windows(2).any(|w| w[0] >= w[1]) {
                return Err(QpError::DimensionMismatch(format!(
                    "column {j} has out-of-range or unsorted row indices"
                )));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            colptr,
            rowval,
            nzval,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowval: Vec::new(),
            nzval: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowval: (0..n).collect(),
            nzval: values.to_vec(),
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, QpError> {
        let mut counts = vec![0usize; ncols];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(QpError::DimensionMismatch(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            counts[j] += 1;
        }
        let mut colptr = vec![0usize; ncols + 1];
        for j in 0..ncols {
            colptr[j + 1] = colptr[j] + counts[j];
        }
        let mut next = colptr.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            rows[next[j]] = i;
            vals[next[j]] = v;
            next[j] += 1;
        }
        let mut out_ptr = vec![0usize; ncols + 1];
        let mut out_rows = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(colptr[j]..colptr[j + 1]);
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                if out_rows.len() > out_ptr[j] && *out_rows.last().unwrap() == rows[p] {
                    *out_vals.last_mut().unwrap() += vals[p];
                } else {
                    out_rows.push(rows[p]);
                    out_vals.push(vals[p]);
                }
            }
            out_ptr[j + 1] = out_rows.len();
        }
        Ok(Self {
            nrows,
            ncols,
            colptr: out_ptr,
            rowval: out_rows,
            nzval: out_vals,
        })
    }

    /// Dense row-major input; exact zeros are not stored.
    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Result<Self, QpError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(QpError::DimensionMismatch("ragged dense rows".into()));
            }
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rowval.len()
    }

    pub fn colptr(&self) -> &[usize] {
        &self.colptr
    }

    pub fn rowval(&self) -> &[usize] {
        &self.rowval
    }

    pub fn nzval(&self) -> &[f64] {
        &self.nzval
    }

    pub fn nzval_mut(&mut self) -> &mut [f64] {
        &mut self.nzval
    }

    /// Iterates `(row, value)` over column `j`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.colptr[j]..self.colptr[j + 1];
        self.rowval[r.clone()]
            .iter()
            .copied()
            .zip(self.nzval[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.colptr[j]..self.colptr[j + 1];
        match self.rowval[r.clone()].binary_search(&i) {
            Ok(p) => self.nzval[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense_rows(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                out[i][j] += v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.rowval {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let colptr = counts.clone();
        let mut next = counts;
        let mut rowval = vec![0usize; self.nnz()];
        let mut nzval = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                rowval[next[i]] = j;
                nzval[next[i]] = v;
                next[i] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            colptr,
            rowval,
            nzval,
        }
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for p in self.colptr[j]..self.colptr[j + 1] {
                out[self.rowval[p]] += self.nzval[p] * xj;
            }
        }
    }

    /// `out = selfᵀ * y`
    pub fn tmul_vec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc += self.nzval[p] * y[self.rowval[p]];
            }
            *o = acc;
        }
    }

    /// Upper triangle (including diagonal) of a square matrix.
    pub fn upper_triangle(&self) -> Self {
        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                if i <= j {
                    rowval.push(i);
                    nzval.push(v);
                }
            }
            colptr[j + 1] = rowval.len();
        }
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            colptr,
            rowval,
            nzval,
        }
    }

    /// Largest absolute entry of `self - selfᵀ`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.ncols.min(self.nrows))
            .map(|j| self.get(j, j))
            .sum()
    }

    /// Scales entry `(i, j)` by `left[i] * right[j]`.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                self.nzval[p] *= left[self.rowval[p]] * right[j];
            }
        }
    }

    pub fn scale_all(&mut self, c: f64) {
        self.nzval.iter_mut().for_each(|v| *v *= c);
    }

    /// Infinity norm of each column.
    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.col(j).fold(0.0_f64, |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    /// Infinity norm of each row.
    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0_f64; self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                out[i] = out[i].max(v.abs());
            }
        }
        out
    }

    /// Stacks a grid of optional blocks into one matrix. Every block row
    /// must agree on height and every block column on width; `None` blocks
    /// are structurally empty.
    pub fn from_blocks(
        blocks: &[Vec<Option<&CscMatrix>>],
        row_heights: &[usize],
        col_widths: &[usize],
    ) -> Result<Self, QpError> {
        if blocks.len() != row_heights.len() {
            return Err(QpError::DimensionMismatch("block row count".into()));
        }
        let nrows: usize = row_heights.iter().sum();
        let ncols: usize = col_widths.iter().sum();
        let mut trip = Vec::new();
        let mut r0 = 0;
        for (bi, brow) in blocks.iter().enumerate() {
            if brow.len() != col_widths.len() {
                return Err(QpError::DimensionMismatch(format!(
                    "block row {bi} has {} blocks, expected {}",
                    brow.len(),
                    col_widths.len()
                )));
            }
            let mut c0 = 0;
            for (bj, blk) in brow.iter().enumerate() {
                if let Some(m) = blk {
                    if m.nrows != row_heights[bi] || m.ncols != col_widths[bj] {
                        return Err(QpError::DimensionMismatch(format!(
                            "block ({bi}, {bj}) is {}x{}, expected {}x{}",
                            m.nrows, m.ncols, row_heights[bi], col_widths[bj]
                        )));
                    }
                    for j in 0..m.ncols {
                        for (i, v) in m.col(j) {
                            trip.push((r0 + i, c0 + j, v));
                        }
                    }
                }
                c0 += col_widths[bj];
            }
            r0 += row_heights[bi];
        }
        Self::from_triplets(nrows, ncols, &trip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CscMatrix::from_triplets(2, 2, &[(1, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn transpose_and_products_agree() {
        let rows = vec![vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 4.0]];
        let m = CscMatrix::from_dense_rows(&rows).unwrap();
        let t = m.transpose();
        assert_eq!(
            t.to_dense_rows(),
            vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 4.0]]
        );
        let mut out = vec![0.0; 2];
        m.mul_vec(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 7.0]);
        let mut out3 = vec![0.0; 3];
        m.tmul_vec(&[1.0, 2.0], &mut out3);
        assert_eq!(out3, vec![1.0, 6.0, 10.0]);
    }

    #[test]
    fn rejects_unsorted_rows() {
        assert!(CscMatrix::new(3, 1, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
    }
}

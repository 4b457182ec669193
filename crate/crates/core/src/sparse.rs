//! Compressed-row sparse matrices for graph adjacency and its normalizations.

use crate::mat::Mat;
use crate::{Error, Result};

/// CSR matrix with sorted column indices per row. Graph adjacency stores no
/// self-loops; normalized operators produced from it do carry diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from (row, col, value) triples. Duplicate coordinates are
    /// rejected; columns are sorted within each row.
    pub fn from_triples(
        n_rows: usize,
        n_cols: usize,
        mut triples: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        for &(i, j, v) in &triples {
            if i as usize >= n_rows || j as usize >= n_cols {
                return Err(Error::invalid(format!(
                    "entry ({i},{j}) out of range for {n_rows}x{n_cols} matrix"
                )));
            }
            if v < 0.0 {
                return Err(Error::invalid("negative weights are not allowed"));
            }
        }
        triples.sort_unstable_by_key(|&(i, j, _)| (i, j));
        for w in triples.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::invalid(format!(
                    "duplicate entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(i, _, _) in &triples {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = triples.iter().map(|t| t.1).collect();
        let values = triples.iter().map(|t| t.2).collect();
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| (j as usize, v))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Weighted row sum.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&(j as u32)) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                if (self.get(j, i) - v).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// y = A x  (dense right operand)
    pub fn matmul_dense(&self, x: &Mat) -> Result<Mat> {
        if self.n_cols != x.rows() {
            return Err(Error::Shape {
                op: "spmm",
                lhs: (self.n_rows, self.n_cols),
                rhs: x.shape(),
            });
        }
        let mut out = Mat::zeros(self.n_rows, x.cols());
        for i in 0..self.n_rows {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let out_row = out.row_mut(i);
            for k in lo..hi {
                let j = self.col_idx[k] as usize;
                let v = self.values[k];
                for (o, &xv) in out_row.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// y = A^T x, by scattering rows of A.
    pub fn t_matmul_dense(&self, x: &Mat) -> Result<Mat> {
        if self.n_rows != x.rows() {
            return Err(Error::Shape {
                op: "spmm_t",
                lhs: (self.n_cols, self.n_rows),
                rhs: x.shape(),
            });
        }
        let mut out = Mat::zeros(self.n_cols, x.cols());
        for i in 0..self.n_rows {
            let xi = x.row(i);
            for (j, v) in self.row(i) {
                let out_row = out.row_mut(j);
                for (o, &xv) in out_row.iter_mut().zip(xi) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                *m.at_mut(i, j) = v;
            }
        }
        m
    }

    /// Scale entry (i,j) by r[i]*c[j]; used by degree normalizations.
    pub fn scale_rows_cols(&self, r: &[f64], c: &[f64]) -> CsrMatrix {
        assert_eq!(r.len(), self.n_rows);
        assert_eq!(c.len(), self.n_cols);
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] = self.values[k] * r[i] * c[self.col_idx[k] as usize];
            }
        }
        out
    }

    /// Insert a diagonal of ones (for self-loop augmentation). Requires a
    /// square matrix with no existing diagonal entries.
    pub fn with_unit_diagonal(&self) -> CsrMatrix {
        assert_eq!(self.n_rows, self.n_cols);
        let n = self.n_rows;
        let mut triples = Vec::with_capacity(self.nnz() + n);
        for i in 0..n {
            debug_assert_eq!(self.get(i, i), 0.0, "diagonal already present");
            triples.push((i as u32, i as u32, 1.0));
            for (j, v) in self.row(i) {
                triples.push((i as u32, j as u32, v));
            }
        }
        CsrMatrix::from_triples(n, n, triples).expect("valid by construction")
    }

    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for (j, _) in self.row(i) {
                out.push((i as u32, j as u32));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4() -> CsrMatrix {
        // 0-1-2-3 path, symmetric
        let triples = vec![
            (0, 1, 1.0),
            (1, 0, 1.0),
            (1, 2, 1.0),
            (2, 1, 1.0),
            (2, 3, 1.0),
            (3, 2, 1.0),
        ];
        CsrMatrix::from_triples(4, 4, triples).unwrap()
    }

    #[test]
    fn build_and_query() {
        let a = path4();
        assert_eq!(a.nnz(), 6);
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(0, 2), 0.0);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn duplicate_rejected() {
        let r = CsrMatrix::from_triples(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn spmm_matches_dense() {
        let a = path4();
        let x = Mat::from_fn(4, 3, |i, j| (i + j) as f64);
        let y = a.matmul_dense(&x).unwrap();
        let yd = a.to_dense().matmul(&x).unwrap();
        assert_eq!(y, yd);
        let yt = a.t_matmul_dense(&x).unwrap();
        let ytd = a.to_dense().transpose().matmul(&x).unwrap();
        assert_eq!(yt, ytd);
    }
}

//! Coordinate and compressed-row sparse matrices.
//!
//! Matrices are assembled as coordinate triplets and frozen into CSR for
//! products. Row-parallel kernels write disjoint output rows, so results do
//! not depend on the thread count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows below this count are processed serially.
const PAR_ROW_THRESHOLD: usize = 2048;

/// Sparse matrix in coordinate (triplet) form. Duplicates are allowed and
/// summed on conversion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooMatrix {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            ..Default::default()
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    /// Appends an entry.
    ///
    /// # Panics
    /// Panics if the position is outside the declared shape.
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        assert!(
            row < self.nrows && col < self.ncols,
            "entry ({row}, {col}) outside {}x{}",
            self.nrows,
            self.ncols
        );
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn extend(&mut self, other: CooMatrix) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.rows.extend(other.rows);
        self.cols.extend(other.cols);
        self.vals.extend(other.vals);
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.rows {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.vals) {
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }

        // Sort each row by column and merge duplicates, keeping insertion
        // order among equal columns so sums are reproducible.
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut data = Vec::with_capacity(self.nnz());
        indptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.nrows {
            scratch.clear();
            scratch.extend(
                cols[counts[r]..counts[r + 1]]
                    .iter()
                    .copied()
                    .zip(vals[counts[r]..counts[r + 1]].iter().copied()),
            );
            scratch.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < scratch.len() {
                let c = scratch[i].0;
                let mut sum = 0.0;
                while i < scratch.len() && scratch[i].0 == c {
                    sum += scratch[i].1;
                    i += 1;
                }
                indices.push(c);
                data.push(sum);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Builds a matrix from a dense row-major slice, dropping exact zeros.
    pub fn from_dense(nrows: usize, ncols: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), nrows * ncols);
        let mut coo = CooMatrix::new(nrows, ncols);
        for r in 0..nrows {
            for c in 0..ncols {
                let v = dense[r * ncols + c];
                if v != 0.0 {
                    coo.push(r, c, v);
                }
            }
        }
        coo.to_csr()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.data[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|i| vals[i]).unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut coo = CooMatrix::with_capacity(self.nrows, self.ncols, self.nnz());
        for (r, c, v) in self.triplets() {
            coo.push(r, c, v);
        }
        coo
    }

    /// Dense row-major copy. Intended for small matrices and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows * self.ncols];
        for (r, c, v) in self.triplets() {
            out[r * self.ncols + c] = v;
        }
        out
    }

    /// Row dot product with a dense vector.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec length mismatch");
        if self.nrows < PAR_ROW_THRESHOLD {
            (0..self.nrows).map(|r| self.row_dot(r, x)).collect()
        } else {
            (0..self.nrows)
                .into_par_iter()
                .map(|r| self.row_dot(r, x))
                .collect()
        }
    }

    /// `y = Aᵀ x`, accumulated serially in row order.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec_transpose length mismatch");
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut coo = CooMatrix::with_capacity(self.ncols, self.nrows, self.nnz());
        for (r, c, v) in self.triplets() {
            coo.push(c, r, v);
        }
        coo.to_csr()
    }

    /// Sparse-sparse product `A B` (row-wise Gustavson).
    pub fn matmul(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        if self.ncols != rhs.nrows {
            return Err(Error::Shape {
                context: "sparse product",
                expected: (self.ncols, rhs.ncols),
                actual: rhs.shape(),
            });
        }
        let ncols = rhs.ncols;
        let product_row = |r: usize, acc: &mut Vec<f64>, mark: &mut Vec<usize>| {
            let mut touched: Vec<usize> = Vec::new();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&c, &b) in rc.iter().zip(rv) {
                    if mark[c] != r + 1 {
                        mark[c] = r + 1;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            let vals: Vec<f64> = touched.iter().map(|&c| acc[c]).collect();
            (touched, vals)
        };
        let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..self.nrows)
            .into_par_iter()
            .map_init(
                || (vec![0.0; ncols], vec![0usize; ncols]),
                |(acc, mark), r| product_row(r, acc, mark),
            )
            .collect();
        let nnz = rows.iter().map(|(c, _)| c.len()).sum();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        indptr.push(0);
        for (c, v) in rows {
            indices.extend(c);
            data.extend(v);
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for &r in rows {
            let (c, v) = self.row(r);
            indices.extend_from_slice(c);
            data.extend_from_slice(v);
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Keeps entries for which `keep(row, col, value)` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize, f64) -> bool) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if keep(r, c, v) {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.ncols];
        for (_, c, v) in self.triplets() {
            sums[c] += v;
        }
        sums
    }

    /// Frobenius norm of `self - other`, over the union of supports.
    pub fn frobenius_distance(&self, other: &CsrMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        let mut total = 0.0;
        for r in 0..self.nrows {
            let (ac, av) = self.row(r);
            let (bc, bv) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let d = match (ac.get(i), bc.get(j)) {
                    (Some(&ca), Some(&cb)) if ca == cb => {
                        i += 1;
                        j += 1;
                        av[i - 1] - bv[j - 1]
                    }
                    (Some(&ca), Some(&cb)) if ca < cb => {
                        i += 1;
                        av[i - 1]
                    }
                    (Some(_), None) => {
                        i += 1;
                        av[i - 1]
                    }
                    _ => {
                        j += 1;
                        -bv[j - 1]
                    }
                };
                total += d * d;
            }
        }
        total.sqrt()
    }

    /// Entrywise linear combination `Σ wᵢ Mᵢ` over matrices of equal shape.
    pub fn weighted_sum(mats: &[&CsrMatrix], weights: &[f64]) -> CsrMatrix {
        assert_eq!(mats.len(), weights.len());
        assert!(!mats.is_empty());
        let (nrows, ncols) = mats[0].shape();
        let mut coo = CooMatrix::new(nrows, ncols);
        for (m, &w) in mats.iter().zip(weights) {
            assert_eq!(m.shape(), (nrows, ncols));
            for (r, c, v) in m.triplets() {
                coo.push(r, c, w * v);
            }
        }
        coo.to_csr()
    }

    /// Writes `row,col,value` triplets preceded by `# key=value` header lines.
    pub fn write_triplets(&self, path: &Path, header: &BTreeMap<String, String>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# dode-coo v1")?;
        writeln!(w, "# nrows={}", self.nrows)?;
        writeln!(w, "# ncols={}", self.ncols)?;
        writeln!(w, "# nnz={}", self.nnz())?;
        for (k, v) in header {
            writeln!(w, "# {k}={v}")?;
        }
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r},{c},{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a triplet file; returns the matrix and the extra header keys.
    pub fn read_triplets(path: &Path) -> Result<(CsrMatrix, BTreeMap<String, String>)> {
        let reader = BufReader::new(File::open(path)?);
        let mut header = BTreeMap::new();
        let mut coo: Option<CooMatrix> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if coo.is_none() {
                let dim = |key: &str| -> Result<usize> {
                    header
                        .get(key)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::parse(path, format!("missing header `{key}`")))
                };
                coo = Some(CooMatrix::new(dim("nrows")?, dim("ncols")?));
            }
            let bad = || Error::parse(path, format!("line {}: malformed triplet", lineno + 1));
            let mut parts = line.split(',');
            let r: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let c: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let m = coo.as_mut().expect("initialized above");
            if r >= m.nrows || c >= m.ncols {
                return Err(bad());
            }
            m.push(r, c, v);
        }
        let coo = match coo {
            Some(m) => m,
            None => {
                let dim = |key: &str| -> Result<usize> {
                    header
                        .get(key)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::parse(path, format!("missing header `{key}`")))
                };
                CooMatrix::new(dim("nrows")?, dim("ncols")?)
            }
        };
        for key in ["nrows", "ncols", "nnz"] {
            header.remove(key);
        }
        Ok((coo.to_csr(), header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                for j in 0..m {
                    out[i * m + j] += a[i * k + l] * b[l * m + j];
                }
            }
        }
        out
    }

    #[test]
    fn duplicates_are_summed() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 1, 1.5);
        coo.push(0, 1, 2.5);
        coo.push(1, 0, -1.0);
        let csr = coo.to_csr();
        assert_eq!(csr.nnz(), 2);
        assert_eq!(csr.get(0, 1), 4.0);
        assert_eq!(csr.get(1, 0), -1.0);
        assert_eq!(csr.get(1, 1), 0.0);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = [1.0, 0.0, 2.0, 0.0, 3.0, 0.0];
        let b = [0.0, 1.0, 4.0, 0.0, 0.5, 0.5];
        let sa = CsrMatrix::from_dense(2, 3, &a);
        let sb = CsrMatrix::from_dense(3, 2, &b);
        let prod = sa.matmul(&sb).unwrap();
        assert_eq!(prod.to_dense(), dense_mul(&a, &b, 2, 3, 2));
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = CsrMatrix::identity(3);
        let b = CsrMatrix::identity(2);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn transpose_matvec_agree() {
        let a = [1.0, 2.0, 0.0, 0.0, 0.0, 3.0];
        let m = CsrMatrix::from_dense(2, 3, &a);
        let x = [1.0, -1.0];
        assert_eq!(m.matvec_transpose(&x), m.transpose().matvec(&x));
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 3.0]);
    }

    #[test]
    fn frobenius_over_union_support() {
        let a = CsrMatrix::from_dense(1, 3, &[1.0, 0.0, 2.0]);
        let b = CsrMatrix::from_dense(1, 3, &[0.0, 2.0, 2.0]);
        assert!((a.frobenius_distance(&b) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn triplet_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.coo");
        let m = CsrMatrix::from_dense(2, 3, &[0.1, 0.0, 1.0 / 3.0, 0.0, 0.0, 7.0]);
        let mut header = BTreeMap::new();
        header.insert("day".to_string(), "2024-01-02".to_string());
        m.write_triplets(&path, &header).unwrap();
        let (back, h) = CsrMatrix::read_triplets(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(h, header);
    }
}

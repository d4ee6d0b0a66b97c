use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("matrix shape {rows}x{cols} has a zero side")));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Builds a matrix from columns of equal length.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dims("columns have unequal lengths"));
        }
        Self::new(rows, cols, columns.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i + j * self.rows] = v;
    }

    pub fn col(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [Complex64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    /// Plain product `self * rhs`.
    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::dims(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(self.matmul_unchecked(rhs))
    }

    pub(crate) fn matmul_unchecked(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        let m = self.rows;
        for j in 0..rhs.cols {
            let out_col = &mut out.data[j * m..(j + 1) * m];
            for k in 0..self.cols {
                let b = rhs.data[k + j * rhs.rows];
                if b.re == 0.0 && b.im == 0.0 {
                    continue;
                }
                let a_col = &self.data[k * m..(k + 1) * m];
                for (o, a) in out_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᴴ * rhs` without materializing the adjoint.
    pub fn adjoint_matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.rows != rhs.rows {
            return Err(Error::dims(format!(
                "adjoint matmul ({}x{})ᴴ * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.cols, rhs.cols);
        for j in 0..rhs.cols {
            let b = rhs.col(j);
            for i in 0..self.cols {
                let a = self.col(i);
                let mut acc = Complex64::new(0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    acc += x.conj() * y;
                }
                out.data[i + j * self.cols] = acc;
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj(&self) -> ComplexMatrix {
        self.map(|v| v.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> ComplexMatrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, |a, b| a * b)
    }

    fn zip_with(&self, rhs: &ComplexMatrix, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<ComplexMatrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::dims(format!(
                "elementwise {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Kronecker product; the row/column index of `rhs` runs fastest.
    pub fn kron(&self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let (p, q) = rhs.shape();
        ComplexMatrix::from_fn(self.rows * p, self.cols * q, |i, j| {
            self.get(i / p, j / q) * rhs.get(i % p, j % q)
        })
    }

    /// Column-wise Kronecker product: column r is `kron(self[:, r], rhs[:, r])`.
    pub fn khatri_rao(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != rhs.cols {
            return Err(Error::dims(format!(
                "khatri-rao needs equal column counts, got {} and {}",
                self.cols, rhs.cols
            )));
        }
        let (m, k) = (self.rows, rhs.rows);
        let mut data = Vec::with_capacity(m * k * self.cols);
        for r in 0..self.cols {
            let b = rhs.col(r);
            for &a in self.col(r) {
                data.extend(b.iter().map(|&bv| a * bv));
            }
        }
        Ok(ComplexMatrix {
            rows: m * k,
            cols: self.cols,
            data,
        })
    }

    /// `selfᴴ self`.
    pub fn gram(&self) -> ComplexMatrix {
        let n = self.cols;
        let mut out = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v: Complex64 = self.col(i).iter().zip(self.col(j)).map(|(a, b)| a.conj() * b).sum();
                out.set(i, j, v);
                out.set(j, i, v.conj());
            }
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm_sq(&self.data).sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.cols {
            for i in 0..self.rows.min(self.cols) {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn select_columns(&self, cols: &[usize]) -> ComplexMatrix {
        let data = cols.iter().flat_map(|&c| self.col(c).iter().copied()).collect();
        ComplexMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    pub fn select_rows(&self, range: std::ops::Range<usize>) -> ComplexMatrix {
        ComplexMatrix::from_fn(range.len(), self.cols, |i, j| self.get(range.start + i, j))
    }
}

pub(crate) fn frob_norm_sq(data: &[Complex64]) -> f64 {
    data.iter().map(|v| v.norm_sqr()).sum()
}

/// Khatri-Rao product of a list, `list[0] ⋄ list[1] ⋄ …`.
pub fn khatri_rao_chain(list: &[&ComplexMatrix]) -> Result<ComplexMatrix> {
    let (first, rest) = list
        .split_first()
        .ok_or_else(|| Error::invalid("khatri-rao chain of zero matrices"))?;
    let mut acc = (*first).clone();
    for m in rest {
        acc = acc.khatri_rao(m)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn khatri_rao_definition() {
        let a = ComplexMatrix::from_real(2, 1, &[1.0, 2.0]).unwrap();
        let b = ComplexMatrix::from_real(2, 1, &[3.0, 4.0]).unwrap();
        let kr = a.khatri_rao(&b).unwrap();
        assert_eq!(kr.data(), &[c(3.0), c(4.0), c(6.0), c(8.0)]);
    }

    #[test]
    fn khatri_rao_ones_column_stacks_copies() {
        let a = ComplexMatrix::from_real(3, 1, &[1.0, 1.0, 1.0]).unwrap();
        let b = ComplexMatrix::from_real(2, 1, &[5.0, -1.0]).unwrap();
        let kr = a.khatri_rao(&b).unwrap();
        assert_eq!(kr.data(), &[c(5.0), c(-1.0), c(5.0), c(-1.0), c(5.0), c(-1.0)]);
    }

    #[test]
    fn khatri_rao_rejects_column_mismatch() {
        let a = ComplexMatrix::zeros(2, 2);
        let b = ComplexMatrix::zeros(2, 3);
        assert!(matches!(a.khatri_rao(&b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let a = ComplexMatrix::from_fn(3, 2, |i, j| Complex64::new(i as f64, j as f64 - 0.5));
        let ones = ComplexMatrix::from_fn(3, 2, |_, _| c(1.0));
        assert_eq!(a.hadamard(&ones).unwrap(), a);
    }

    #[test]
    fn adjoint_matmul_matches_explicit() {
        let a = ComplexMatrix::from_fn(4, 3, |i, j| Complex64::new(i as f64 + 1.0, j as f64 * 0.3));
        let b = ComplexMatrix::from_fn(4, 2, |i, j| Complex64::new(j as f64 - i as f64, 0.7));
        let fast = a.adjoint_matmul(&b).unwrap();
        let slow = a.adjoint().matmul(&b).unwrap();
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).norm() < 1e-13);
        }
        let g = a.gram();
        let g2 = a.adjoint().matmul(&a).unwrap();
        for (x, y) in g.data().iter().zip(g2.data()) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn kron_layout() {
        let a = ComplexMatrix::from_real(2, 1, &[1.0, 2.0]).unwrap();
        let b = ComplexMatrix::from_real(1, 2, &[3.0, 4.0]).unwrap();
        let k = a.kron(&b);
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k.get(1, 1), c(8.0));
        assert_eq!(k.get(0, 1), c(4.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ComplexMatrix::new(2, 2, vec![c(0.0); 3]).is_err());
        assert!(ComplexMatrix::new(0, 2, vec![]).is_err());
        assert!(ComplexMatrix::zeros(2, 3).matmul(&ComplexMatrix::zeros(2, 3)).is_err());
    }
}

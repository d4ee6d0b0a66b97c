//! Dense complex tensors and the matrix algebra the solvers are built on.
//!
//! Storage is column-major everywhere (first index fastest) with interleaved
//! `(re, im)` pairs, which is also the on-disk layout. Mode indices in this
//! crate are zero-based: mode `0` is the first mode.
//!
//! Matricization follows the Kolda ordering: entry `(i_0, …, i_{N-1})` lands in
//! row `i_n` and column `Σ_{k≠n} i_k J_k` with `J_k = Π_{m<k, m≠n} I_m`. Paired
//! with that, the unfolding of a CP tensor is
//! `X_(n) = A_n diag(α) (A_{N-1} ⋄ … ⋄ A_{n+1} ⋄ A_{n-1} ⋄ … ⋄ A_0)ᵀ`.

mod linalg;
mod matrix;

pub use linalg::{cholesky, hermitian_eig, hermitian_solve, singular_values, HermitianEig, HermitianSolve};
pub use matrix::{khatri_rao_chain, ComplexMatrix};
pub(crate) use matrix::frob_norm_sq;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 8;

/// Dense N-way complex array.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexDenseTensor {
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_ORDER {
        return Err(Error::invalid(format!(
            "tensor order must be in 1..={MAX_ORDER}, got {}",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("tensor dims {dims:?} contain a zero")));
    }
    Ok(dims.iter().product())
}

impl ComplexDenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return Err(Error::dims(format!(
                "tensor {dims:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    /// Fills entries from their multi-index, visiting in storage order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> Complex64) -> Result<Self> {
        let len = check_dims(dims)?;
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            advance(&mut idx, dims);
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn from_real(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            lin += i * stride;
            stride *= d;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> Complex64 {
        self.data[self.linear_index(idx)]
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Mode-`n` unfolding, an `I_n × Π_{m≠n} I_m` matrix.
    pub fn matricize(&self, n: usize) -> Result<ComplexMatrix> {
        self.check_mode(n)?;
        let rows = self.dims[n];
        let cols = self.len() / rows;
        if n == 0 {
            return ComplexMatrix::new(rows, cols, self.data.clone());
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        // strides of each mode inside the unfolded column index
        let col_strides = unfolding_strides(&self.dims, n);
        let mut idx = vec![0usize; self.order()];
        for &v in &self.data {
            let col: usize = idx
                .iter()
                .zip(&col_strides)
                .map(|(&i, &s)| i * s)
                .sum();
            out[idx[n] + col * rows] = v;
            advance(&mut idx, &self.dims);
        }
        ComplexMatrix::new(rows, cols, out)
    }

    /// Inverse of [`matricize`](Self::matricize).
    pub fn fold(m: &ComplexMatrix, n: usize, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        if n >= dims.len() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: dims.len(),
            });
        }
        if m.rows() != dims[n] || m.rows() * m.cols() != len {
            return Err(Error::dims(format!(
                "cannot fold a {}x{} matrix along mode {n} into {dims:?}",
                m.rows(),
                m.cols()
            )));
        }
        if n == 0 {
            return Self::new(dims.to_vec(), m.data().to_vec());
        }
        let col_strides = unfolding_strides(dims, n);
        let rows = dims[n];
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let col: usize = idx.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
            data.push(m.data()[idx[n] + col * rows]);
            advance(&mut idx, dims);
        }
        Self::new(dims.to_vec(), data)
    }

    /// `t ×_n m`: replaces `I_n` by `rows(m)`.
    pub fn mode_n_product(&self, m: &ComplexMatrix, n: usize) -> Result<Self> {
        self.check_mode(n)?;
        if m.cols() != self.dims[n] {
            return Err(Error::dims(format!(
                "mode-{n} product needs {} matrix columns, got {}",
                self.dims[n],
                m.cols()
            )));
        }
        let mut out_dims = self.dims.clone();
        out_dims[n] = m.rows();
        // Treat the tensor as (left, I_n, right) with left = Π_{k<n} I_k.
        let left: usize = self.dims[..n].iter().product();
        let right: usize = self.dims[n + 1..].iter().product();
        let (p, q) = (m.rows(), m.cols());
        let mut out = vec![Complex64::new(0.0, 0.0); left * p * right];
        for r in 0..right {
            for k in 0..q {
                let src = &self.data[(r * q + k) * left..(r * q + k + 1) * left];
                for i in 0..p {
                    let a = m.get(i, k);
                    if a.re == 0.0 && a.im == 0.0 {
                        continue;
                    }
                    let dst = &mut out[(r * p + i) * left..(r * p + i + 1) * left];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += a * s;
                    }
                }
            }
        }
        Self::new(out_dims, out)
    }

    /// Outer product `v_0 ∘ v_1 ∘ …`.
    pub fn outer(vectors: &[&[Complex64]]) -> Result<Self> {
        let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        Self::from_fn(&dims, |idx| {
            idx.iter()
                .zip(vectors)
                .map(|(&i, v)| v[i])
                .product()
        })
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm_sq(&self.data).sqrt()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        frob_norm_sq(&self.data)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        if self.dims != rhs.dims {
            return Err(Error::dims(format!("{:?} vs {:?}", self.dims, rhs.dims)));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.dims != rhs.dims {
            return Err(Error::dims(format!("{:?} vs {:?}", self.dims, rhs.dims)));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Reorders modes: output mode `k` is input mode `order[k]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.order()];
        if order.len() != self.order() {
            return Err(Error::invalid(format!("permutation {order:?} has wrong length")));
        }
        for &o in order {
            if o >= self.order() || seen[o] {
                return Err(Error::invalid(format!("{order:?} is not a permutation")));
            }
            seen[o] = true;
        }
        let out_dims: Vec<usize> = order.iter().map(|&o| self.dims[o]).collect();
        let mut src_idx = vec![0usize; self.order()];
        Self::from_fn(&out_dims, |idx| {
            for (k, &o) in order.iter().enumerate() {
                src_idx[o] = idx[k];
            }
            self.get(&src_idx)
        })
    }
}

/// Stride of every mode inside the mode-`n` unfolding column index (0 for `n`).
fn unfolding_strides(dims: &[usize], n: usize) -> Vec<usize> {
    let mut strides = vec![0usize; dims.len()];
    let mut s = 1;
    for (k, &d) in dims.iter().enumerate() {
        if k == n {
            continue;
        }
        strides[k] = s;
        s *= d;
    }
    strides
}

#[inline]
fn advance(idx: &mut [usize], dims: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn seq_tensor(dims: &[usize]) -> ComplexDenseTensor {
        let mut k = 0.0;
        ComplexDenseTensor::from_fn(dims, |_| {
            k += 1.0;
            c(k, -0.5 * k)
        })
        .unwrap()
    }

    #[test]
    fn matrix_tensor_mode0_is_itself() {
        let t = ComplexDenseTensor::from_real(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.matricize(0).unwrap();
        assert_eq!(m.data(), t.data());
        assert_eq!(m.shape(), (2, 2));
        let m1 = t.matricize(1).unwrap();
        assert_eq!(m1, m.transpose());
    }

    #[test]
    fn rank_one_unfolding_columns_are_scaled_copies() {
        let a = [c(1.0, 0.0), c(2.0, 1.0)];
        let b = [c(0.5, 0.0), c(-1.0, 0.0), c(3.0, 0.0)];
        let cc = [c(1.0, 1.0), c(2.0, 0.0)];
        let t = ComplexDenseTensor::outer(&[&a, &b, &cc]).unwrap();
        let m = t.matricize(0).unwrap();
        for j in 0..6 {
            let scale = b[j % 3] * cc[j / 3];
            for i in 0..2 {
                assert!((m.get(i, j) - a[i] * scale).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn unfolding_index_map() {
        let t = seq_tensor(&[2, 3, 4]);
        let m = t.matricize(1).unwrap();
        // entry (i0, i1, i2) -> row i1, column i0 + 2*i2
        assert_eq!(m.get(2, 1 + 2 * 3), t.get(&[1, 2, 3]));
        let m2 = t.matricize(2).unwrap();
        assert_eq!(m2.get(3, 1 + 2 * 2), t.get(&[1, 2, 3]));
    }

    #[test]
    fn fold_round_trip_all_modes() {
        let t = seq_tensor(&[3, 4, 5]);
        for n in 0..3 {
            let m = t.matricize(n).unwrap();
            assert_eq!(ComplexDenseTensor::fold(&m, n, t.dims()).unwrap(), t);
        }
    }

    #[test]
    fn mode_product_identity_and_errors() {
        let t = seq_tensor(&[3, 4, 2]);
        let id = ComplexMatrix::identity(4);
        assert_eq!(t.mode_n_product(&id, 1).unwrap(), t);
        assert!(t.mode_n_product(&ComplexMatrix::identity(3), 1).is_err());
        assert!(matches!(t.matricize(3), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn mode_product_rank_one() {
        let a = [c(1.0, 0.0), c(2.0, -1.0), c(0.0, 1.0)];
        let b = [c(0.5, 0.5), c(-1.0, 0.0)];
        let t = ComplexDenseTensor::outer(&[&a, &b]).unwrap();
        let m = ComplexMatrix::from_fn(2, 3, |i, j| c(i as f64 + j as f64, 1.0));
        let ma: Vec<Complex64> = (0..2)
            .map(|i| (0..3).map(|j| m.get(i, j) * a[j]).sum())
            .collect();
        let expect = ComplexDenseTensor::outer(&[&ma, &b]).unwrap();
        let got = t.mode_n_product(&m, 0).unwrap();
        assert!(got.sub(&expect).unwrap().frob_norm() < 1e-13);
    }

    #[test]
    fn frob_norm_zero_and_outer_separability() {
        assert_eq!(ComplexDenseTensor::zeros(&[2, 3]).unwrap().frob_norm(), 0.0);
        let a = [c(1.0, 2.0), c(0.0, -1.0)];
        let b = [c(3.0, 0.0)];
        let cc = [c(0.5, 0.5), c(1.0, 0.0), c(-2.0, 0.0)];
        let t = ComplexDenseTensor::outer(&[&a, &b, &cc]).unwrap();
        let norm = |v: &[Complex64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!((t.frob_norm() - norm(&a) * norm(&b) * norm(&cc)).abs() < 1e-13);
    }

    #[test]
    fn permute_moves_entries() {
        let t = seq_tensor(&[2, 3, 4]);
        let p = t.permute(&[1, 0, 2]).unwrap();
        assert_eq!(p.dims(), &[3, 2, 4]);
        assert_eq!(p.get(&[2, 1, 3]), t.get(&[1, 2, 3]));
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(ComplexDenseTensor::zeros(&[]).is_err());
        assert!(ComplexDenseTensor::zeros(&[2, 0]).is_err());
        assert!(ComplexDenseTensor::zeros(&[1; 9]).is_err());
        assert!(ComplexDenseTensor::new(vec![2, 2], vec![c(0.0, 0.0); 3]).is_err());
    }
}

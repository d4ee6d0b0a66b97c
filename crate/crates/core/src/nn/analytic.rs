//! Closed-form Jacobian of the first ALS update with respect to the mode-1
//! starting factor, used to cross-check the reverse sweep.
//!
//! For `Φ = P G⁻¹` with `P = Y_(0) conj(A_2 ⋄ A_1)` and
//! `G = A_1ᵀA_1* ⊙ A_2ᵀA_2*`, holding `A_1*` and `A_2` fixed:
//!
//! ```text
//! D vec(A_1ᵀA_1*) = (A_1ᴴ ⊗ I_R) K_{I_1,R}
//! D vec(G)        = diag(vec(A_2ᵀA_2*)) · D vec(A_1ᵀA_1*)
//! D vec(G⁻¹)      = −(G⁻ᵀ ⊗ G⁻¹) · D vec(G)
//! D vec(Φ)        = (I_R ⊗ P) · D vec(G⁻¹)
//! ```

use num_complex::Complex64;

use super::tape::{DiffGraph, Value, Var};
use crate::als::mttkrp;
use crate::error::{Error, Result};
use crate::tensor::{cholesky, hermitian_solve, ComplexDenseTensor, ComplexMatrix};

/// `K_{m,n}` with `K vec(Z) = vec(Zᵀ)` for `Z` of shape `m × n`.
pub fn commutation_matrix(m: usize, n: usize) -> ComplexMatrix {
    let mut k = ComplexMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            k.set(j + i * n, i + j * m, Complex64::new(1.0, 0.0));
        }
    }
    k
}

fn check_inputs(y: &ComplexDenseTensor, a1: &ComplexMatrix, a2: &ComplexMatrix) -> Result<()> {
    if y.order() != 3 {
        return Err(Error::invalid("the closed form covers third-order tensors only"));
    }
    if a1.rows() != y.dims()[1] || a2.rows() != y.dims()[2] || a1.cols() != a2.cols() {
        return Err(Error::dims(format!(
            "factors {:?} and {:?} do not fit a tensor of shape {:?}",
            a1.shape(),
            a2.shape(),
            y.dims()
        )));
    }
    Ok(())
}

/// Wirtinger Jacobian `∂vec(Φ)/∂vec(A_1)ᵀ` of the mode-0 update, shape
/// `(I_0·R) × (I_1·R)`. Rejects instances whose Gram is singular.
pub fn analytic_grad_step0(y: &ComplexDenseTensor, a1: &ComplexMatrix, a2: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_inputs(y, a1, a2)?;
    let r = a1.cols();
    let i1 = a1.rows();
    let placeholder = ComplexMatrix::zeros(y.dims()[0], r);
    let p = mttkrp(y, &[placeholder, a1.clone(), a2.clone()], 0)?;
    let c = a2.gram().conj();
    let g = a1.gram().conj().hadamard(&c)?;
    if cholesky(&g).is_none() {
        return Err(Error::Numerical("Gram matrix of the update is singular".into()));
    }
    let g_inv = hermitian_solve(&g, &ComplexMatrix::identity(r))?.solution;

    let d_gram = a1.adjoint().kron(&ComplexMatrix::identity(r)).matmul(&commutation_matrix(i1, r))?;
    let vec_c = c.data();
    let d_had = ComplexMatrix::from_fn(r * r, i1 * r, |row, col| vec_c[row] * d_gram.get(row, col));
    let d_inv = g_inv
        .transpose()
        .kron(&g_inv)
        .scale(Complex64::new(-1.0, 0.0))
        .matmul(&d_had)?;
    ComplexMatrix::identity(r).kron(&p).matmul(&d_inv)
}

/// The mode-0 update `Φ(A_1; A_2)` recorded with `A_1` as the only input.
pub fn record_step0<'m>(
    y: &ComplexDenseTensor,
    a1: &ComplexMatrix,
    a2: &ComplexMatrix,
) -> Result<(DiffGraph<'m>, Var, Var)> {
    check_inputs(y, a1, a2)?;
    let mut g = DiffGraph::new();
    let x1 = g.input(Value::Complex(a1.clone()));
    let x2 = g.constant(Value::Complex(a2.clone()));
    let y0 = g.constant(Value::Complex(y.matricize(0)?));
    let c1 = g.conj(x1);
    let c2 = g.conj(x2);
    let kr = g.khatri_rao(c2, c1)?;
    let m = g.matmul(y0, kr)?;
    let t1 = g.transpose(x1);
    let g1 = g.matmul(t1, c1)?;
    let t2 = g.transpose(x2);
    let g2 = g.matmul(t2, c2)?;
    let gram = g.hadamard(g1, g2)?;
    let phi = g.right_solve(m, gram)?;
    Ok((g, x1, phi))
}

/// `cᴴ J` for the Wirtinger Jacobian `J = ∂vec(Φ)/∂vec(A_1)ᵀ`, read off two
/// reverse sweeps over the real functionals `Re(cᴴΦ)` and `Im(cᴴΦ)`.
pub fn backward_jacobian_row(
    y: &ComplexDenseTensor,
    a1: &ComplexMatrix,
    a2: &ComplexMatrix,
    c: &ComplexMatrix,
) -> Result<Vec<Complex64>> {
    let (mut g, x1, phi) = record_step0(y, a1, a2)?;
    let l_re = g.real_inner(phi, c.clone())?;
    let l_im = g.real_inner(phi, c.scale(Complex64::new(0.0, 1.0)))?;
    let g1 = g.backward(l_re, 1.0)?;
    let g2 = g.backward(l_im, 1.0)?;
    let d1 = g1.wrt(x1).and_then(Value::as_complex).expect("input gradient").clone();
    let d2 = g2.wrt(x1).and_then(Value::as_complex).expect("input gradient").clone();
    Ok(d1
        .data()
        .iter()
        .zip(d2.data())
        .map(|(u, v)| 0.5 * Complex64::new(u.re + v.im, v.re - u.im))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::als::{als_step_with, SolveMode};
    use crate::rng;

    fn rand_c(rows: usize, cols: usize, r: &mut rng::StreamRng) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| rng::complex_normal(r, 1.0))
    }

    fn instance(seed: u64, dims: [usize; 3], rank: usize) -> (ComplexDenseTensor, ComplexMatrix, ComplexMatrix) {
        let mut r = rng::stream(seed, 0);
        let y = ComplexDenseTensor::from_fn(&dims, |_| rng::complex_normal(&mut r, 1.0)).unwrap();
        let a1 = rand_c(dims[1], rank, &mut r);
        let a2 = rand_c(dims[2], rank, &mut r);
        (y, a1, a2)
    }

    fn phi(y: &ComplexDenseTensor, a1: &ComplexMatrix, a2: &ComplexMatrix) -> ComplexMatrix {
        let f = [ComplexMatrix::zeros(y.dims()[0], a1.cols()), a1.clone(), a2.clone()];
        als_step_with(y, &f, 0, SolveMode::Inverse).unwrap().factor
    }

    #[test]
    fn commutation_transposes() {
        let z = ComplexMatrix::from_fn(3, 2, |i, j| Complex64::new((i * 2 + j) as f64, i as f64));
        let kz = commutation_matrix(3, 2).matmul(&ComplexMatrix::new(6, 1, z.data().to_vec()).unwrap()).unwrap();
        assert_eq!(kz.data(), z.transpose().data());
    }

    #[test]
    fn rank_one_reduces_to_scalar_derivative() {
        // Φ = p / (s c) with s = Σ a_i a_i*, so ∂Φ/∂a_i = −p a_i* / (s² c)
        let (y, a1, a2) = instance(3, [3, 4, 2], 1);
        let j = analytic_grad_step0(&y, &a1, &a2).unwrap();
        let p = mttkrp(&y, &[ComplexMatrix::zeros(3, 1), a1.clone(), a2.clone()], 0).unwrap();
        let s: f64 = a1.data().iter().map(|v| v.norm_sqr()).sum();
        let c: f64 = a2.data().iter().map(|v| v.norm_sqr()).sum();
        for row in 0..3 {
            for i in 0..4 {
                let expect = -p.get(row, 0) * a1.get(i, 0).conj() / (s * s * c);
                assert!((j.get(row, i) - expect).norm() < 1e-12 * expect.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn matches_finite_differences() {
        let (y, a1, a2) = instance(5, [4, 4, 4], 2);
        let j = analytic_grad_step0(&y, &a1, &a2).unwrap();
        let h = 1e-6;
        let mut err = 0.0;
        let mut norm = 0.0;
        for col in 0..a1.data().len() {
            let d = |delta: Complex64| {
                let mut p = a1.clone();
                let mut q = a1.clone();
                p.data_mut()[col] += delta;
                q.data_mut()[col] -= delta;
                phi(&y, &p, &a2).sub(&phi(&y, &q, &a2)).unwrap().scale(Complex64::new(0.5 / h, 0.0))
            };
            let dx = d(Complex64::new(h, 0.0));
            let dy = d(Complex64::new(0.0, h));
            for row in 0..dx.data().len() {
                let w = 0.5 * (dx.data()[row] - Complex64::new(0.0, 1.0) * dy.data()[row]);
                err += (w - j.get(row, col)).norm_sqr();
                norm += w.norm_sqr();
            }
        }
        assert!((err / norm).sqrt() < 1e-6, "relative error {}", (err / norm).sqrt());
    }

    #[test]
    fn agrees_with_reverse_sweep() {
        for seed in 0..4 {
            let (y, a1, a2) = instance(100 + seed, [4, 4, 4], 2);
            let j = analytic_grad_step0(&y, &a1, &a2).unwrap();
            let mut r = rng::stream(seed, 9);
            let c = rand_c(4, 2, &mut r);
            let row = backward_jacobian_row(&y, &a1, &a2, &c).unwrap();
            let ch = ComplexMatrix::new(1, 8, c.data().iter().map(|v| v.conj()).collect()).unwrap();
            let want = ch.matmul(&j).unwrap();
            let err: f64 = row.iter().zip(want.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-8 * want.frob_norm(), "seed {seed}: {}", err / want.frob_norm());
        }
    }

    #[test]
    fn singular_gram_is_rejected() {
        let (y, mut a1, a2) = instance(7, [3, 3, 3], 2);
        for i in 0..3 {
            let v = a1.get(i, 0);
            a1.set(i, 1, v);
        }
        let mut a2 = a2;
        for i in 0..3 {
            let v = a2.get(i, 0);
            a2.set(i, 1, v);
        }
        assert!(matches!(analytic_grad_step0(&y, &a1, &a2), Err(Error::Numerical(_))));
    }
}

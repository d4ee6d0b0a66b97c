use num_complex::Complex64;

use super::ComplexMatrix;
use crate::error::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-10;
const PIVOT_REL_TOL: f64 = 1e-13;
const TIKHONOV_REL: f64 = 1e-12;

/// Result of a Hermitian solve; `regularized` is set when the Tikhonov
/// fallback had to be used.
#[derive(Clone, Debug)]
pub struct HermitianSolve {
    pub solution: ComplexMatrix,
    pub regularized: bool,
    /// Shift added to the diagonal (0 when not regularized).
    pub shift: f64,
}

/// Lower-triangular `L` with `g = L Lᴴ`, or `None` when `g` is not positive
/// definite within tolerance.
pub fn cholesky(g: &ComplexMatrix) -> Option<ComplexMatrix> {
    let n = g.rows();
    let max_diag = (0..n).map(|i| g.get(i, i).re).fold(0.0_f64, f64::max);
    if max_diag <= 0.0 || !max_diag.is_finite() {
        return None;
    }
    let tol = PIVOT_REL_TOL * max_diag;
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = g.get(j, j).re;
        for k in 0..j {
            d -= l.get(j, k).norm_sqr();
        }
        if !(d > tol) {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, Complex64::new(djj, 0.0));
        for i in j + 1..n {
            let mut s = g.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k).conj();
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

fn cholesky_solve(l: &ComplexMatrix, rhs: &ComplexMatrix) -> ComplexMatrix {
    let n = l.rows();
    let mut x = rhs.clone();
    for c in 0..rhs.cols() {
        let col = x.col_mut(c);
        // forward: L y = b
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l.get(i, k) * col[k];
            }
            col[i] = s / l.get(i, i).re;
        }
        // backward: Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l.get(k, i).conj() * col[k];
            }
            col[i] = s / l.get(i, i).re;
        }
    }
    x
}

/// Solves `g X = rhs` for Hermitian `g`.
///
/// Uses a Cholesky factorization; when `g` is not positive definite the
/// system is solved with `g + εI`, `ε = 1e-12·trace(g)/R`, and the result is
/// flagged as regularized.
pub fn hermitian_solve(g: &ComplexMatrix, rhs: &ComplexMatrix) -> Result<HermitianSolve> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::dims(format!("hermitian solve needs a square matrix, got {}x{}", n, g.cols())));
    }
    if rhs.rows() != n {
        return Err(Error::dims(format!(
            "right-hand side has {} rows, matrix is {n}x{n}",
            rhs.rows()
        )));
    }
    let scale = g.data().iter().map(|v| v.norm()).fold(1.0_f64, f64::max);
    if g.hermitian_defect() > HERMITIAN_TOL * scale {
        return Err(Error::invalid("matrix is not Hermitian within tolerance"));
    }
    if let Some(l) = cholesky(g) {
        return Ok(HermitianSolve {
            solution: cholesky_solve(&l, rhs),
            regularized: false,
            shift: 0.0,
        });
    }
    let mut shift = TIKHONOV_REL * g.trace().re / n as f64;
    if !(shift > 0.0) || !shift.is_finite() {
        shift = TIKHONOV_REL;
    }
    // Grow the shift until the factorization goes through; indefinite inputs
    // may need more than the nominal one.
    for _ in 0..40 {
        let mut shifted = g.clone();
        for i in 0..n {
            let v = shifted.get(i, i);
            shifted.set(i, i, v + shift);
        }
        if let Some(l) = cholesky(&shifted) {
            return Ok(HermitianSolve {
                solution: cholesky_solve(&l, rhs),
                regularized: true,
                shift,
            });
        }
        shift *= 10.0;
    }
    Err(Error::Numerical("regularized Hermitian solve failed to factorize".into()))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    /// Unitary matrix whose column `k` pairs with `values[k]`.
    pub vectors: ComplexMatrix,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
///
/// Iterates until the off-diagonal Frobenius mass drops below
/// `tol · ‖a‖_F` (or 100 sweeps).
pub fn hermitian_eig(a: &ComplexMatrix, tol: f64) -> Result<HermitianEig> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dims("eigendecomposition needs a square matrix"));
    }
    let mut m = a.clone();
    // symmetrize so tiny round-off asymmetry cannot stall convergence
    for j in 0..n {
        let d = m.get(j, j).re;
        m.set(j, j, Complex64::new(d, 0.0));
        for i in j + 1..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i).conj());
            m.set(i, j, v);
            m.set(j, i, v.conj());
        }
    }
    let total = m.frob_norm();
    let mut v = ComplexMatrix::identity(n);
    let off = |m: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    s += m.get(i, j).norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while sweeps < 100 && off(&m) > tol * total && total > 0.0 {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = m.get(p, p).re;
                let aqq = m.get(q, q).re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // phase that makes the (p,q) entry real: apq = mag·e^{iφ}
                let e = apq / mag;
                // rotation acting on columns p, q: V = [[c, s], [-s·ē, c·ē]]
                let v_pp = Complex64::new(c, 0.0);
                let v_pq = Complex64::new(s, 0.0);
                let v_qp = -e.conj() * s;
                let v_qq = e.conj() * c;
                // M ← M V
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, mkp * v_pp + mkq * v_qp);
                    m.set(k, q, mkp * v_pq + mkq * v_qq);
                }
                // M ← Vᴴ M
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, v_pp.conj() * mpk + v_qp.conj() * mqk);
                    m.set(q, k, v_pq.conj() * mpk + v_qq.conj() * mqk);
                }
                m.set(p, q, Complex64::new(0.0, 0.0));
                m.set(q, p, Complex64::new(0.0, 0.0));
                let d = m.get(p, p).re;
                m.set(p, p, Complex64::new(d, 0.0));
                let d = m.get(q, q).re;
                m.set(q, q, Complex64::new(d, 0.0));
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, vkp * v_pp + vkq * v_qp);
                    v.set(k, q, vkp * v_pq + vkq * v_qq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).re.total_cmp(&m.get(i, i).re));
    let values = order.iter().map(|&i| m.get(i, i).re).collect();
    let vectors = v.select_columns(&order);
    Ok(HermitianEig {
        values,
        vectors,
        sweeps,
    })
}

/// Singular values (descending) by one-sided Jacobi orthogonalization of
/// the columns. Accurate relative to the largest singular value, unlike
/// square roots of Gram eigenvalues.
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    let mut m = a.clone();
    let n = m.cols();
    let rows = m.rows();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, Complex64::new(0.0, 0.0));
                for i in 0..rows {
                    let x = m.get(i, p);
                    let y = m.get(i, q);
                    alpha += x.norm_sqr();
                    beta += y.norm_sqr();
                    gamma += x.conj() * y;
                }
                let mag = gamma.norm();
                if mag <= 1e-15 * (alpha * beta).sqrt() || mag == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = (beta - alpha) / (2.0 * mag);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let e = gamma / mag;
                let v_qp = -e.conj() * s;
                let v_qq = e.conj() * c;
                for i in 0..rows {
                    let x = m.get(i, p);
                    let y = m.get(i, q);
                    m.set(i, p, x * c + y * v_qp);
                    m.set(i, q, x * s + y * v_qq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| m.col(j).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_matrix(rows: usize, cols: usize, seed: f64) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |i, j| {
            let x = (i * 7 + j * 13) as f64 + seed;
            c((x * 0.37).sin(), (x * 0.91).cos())
        })
    }

    #[test]
    fn identity_returns_rhs() {
        let rhs = test_matrix(3, 2, 0.1);
        let out = hermitian_solve(&ComplexMatrix::identity(3), &rhs).unwrap();
        assert!(!out.regularized);
        assert!(out.solution.sub(&rhs).unwrap().frob_norm() < 1e-15);
    }

    #[test]
    fn scaled_identity_halves() {
        let g = ComplexMatrix::identity(3).scale(c(2.0, 0.0));
        let out = hermitian_solve(&g, &ComplexMatrix::identity(3)).unwrap();
        let half = ComplexMatrix::identity(3).scale(c(0.5, 0.0));
        assert!(out.solution.sub(&half).unwrap().frob_norm() < 1e-15);
    }

    #[test]
    fn pd_residual_is_small() {
        let a = test_matrix(6, 4, 0.3);
        let g = a.gram().add(&ComplexMatrix::identity(4)).unwrap();
        let rhs = test_matrix(4, 3, 1.7);
        let out = hermitian_solve(&g, &rhs).unwrap();
        let res = g.matmul(&out.solution).unwrap().sub(&rhs).unwrap().frob_norm();
        assert!(res < 1e-10 * rhs.frob_norm());
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let col = test_matrix(4, 1, 0.2);
        let g = ComplexMatrix::from_columns(&[col.data().to_vec(), col.data().to_vec()])
            .unwrap()
            .gram();
        let out = hermitian_solve(&g, &ComplexMatrix::identity(2)).unwrap();
        assert!(out.regularized);
        assert!(out.shift > 0.0);
    }

    #[test]
    fn rejects_non_square_and_non_hermitian() {
        assert!(hermitian_solve(&ComplexMatrix::zeros(2, 3), &ComplexMatrix::zeros(2, 1)).is_err());
        assert!(hermitian_solve(&ComplexMatrix::identity(2), &ComplexMatrix::zeros(3, 1)).is_err());
        let mut g = ComplexMatrix::identity(2);
        g.set(0, 1, c(1.0, 0.0));
        assert!(hermitian_solve(&g, &ComplexMatrix::identity(2)).is_err());
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = test_matrix(5, 9, 0.4);
        let g = a.matmul(&a.adjoint()).unwrap();
        let eig = hermitian_eig(&g, 1e-14).unwrap();
        for w in eig.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let lam = ComplexMatrix::from_fn(5, 5, |i, j| if i == j { c(eig.values[i], 0.0) } else { c(0.0, 0.0) });
        let rec = eig.vectors.matmul(&lam).unwrap().matmul(&eig.vectors.adjoint()).unwrap();
        assert!(rec.sub(&g).unwrap().frob_norm() < 1e-11 * g.frob_norm());
        let vv = eig.vectors.gram();
        assert!(vv.sub(&ComplexMatrix::identity(5)).unwrap().frob_norm() < 1e-12);
    }

    #[test]
    fn singular_values_of_collinear_columns() {
        let a = test_matrix(5, 1, 0.2);
        let two = ComplexMatrix::from_columns(&[a.data().to_vec(), a.scale(c(0.0, 2.0)).data().to_vec()]).unwrap();
        let sv = singular_values(&two);
        assert!(sv[1] < 1e-14 * sv[0]);
        let g = test_matrix(4, 3, 0.9);
        let sv = singular_values(&g);
        let eig = hermitian_eig(&g.gram(), 1e-15).unwrap();
        for (s, l) in sv.iter().zip(&eig.values) {
            assert!((s * s - l).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobi_diagonal_input() {
        let d = ComplexMatrix::from_fn(3, 3, |i, j| if i == j { c([1.0, 9.0, 4.0][i], 0.0) } else { c(0.0, 0.0) });
        let eig = hermitian_eig(&d, 1e-12).unwrap();
        assert_eq!(eig.values, vec![9.0, 4.0, 1.0]);
        assert_eq!(eig.sweeps, 0);
    }
}

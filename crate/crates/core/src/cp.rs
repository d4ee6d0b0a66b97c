//! CP factor representation: reconstruction, ambiguity normalization,
//! Vandermonde factors, Kruskal rank and the uniqueness test.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{khatri_rao_chain, ComplexDenseTensor, ComplexMatrix};

/// Largest rank handled by the exhaustive Kruskal-rank and alignment routines.
pub const MAX_EXACT_RANK: usize = 6;
const KRANK_REL_TOL: f64 = 1e-9;

/// `⟦α; A_0, …, A_{N-1}⟧`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpFactors {
    pub weights: Vec<Complex64>,
    pub factors: Vec<ComplexMatrix>,
}

impl CpFactors {
    pub fn new(weights: Vec<Complex64>, factors: Vec<ComplexMatrix>) -> Result<Self> {
        let r = weights.len();
        if r == 0 {
            return Err(Error::invalid("CP rank must be positive"));
        }
        if factors.is_empty() {
            return Err(Error::invalid("CP model needs at least one factor"));
        }
        if let Some(f) = factors.iter().find(|f| f.cols() != r) {
            return Err(Error::dims(format!("factor has {} columns, rank is {r}", f.cols())));
        }
        Ok(Self { weights, factors })
    }

    /// Factors with all-ones weights.
    pub fn unweighted(factors: Vec<ComplexMatrix>) -> Result<Self> {
        let r = factors.first().map_or(0, |f| f.cols());
        Self::new(vec![Complex64::new(1.0, 0.0); r], factors)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn is_unweighted(&self) -> bool {
        self.weights.iter().all(|&w| w == Complex64::new(1.0, 0.0))
    }

    /// Σ_r α_r a_{0,r} ∘ … ∘ a_{N-1,r}, summed entry by entry.
    pub fn reconstruct(&self) -> Result<ComplexDenseTensor> {
        let dims = self.dims();
        let r = self.rank();
        let mut out = ComplexDenseTensor::zeros(&dims)?;
        // accumulate each rank-one term with a running product over modes
        let mut idx = vec![0usize; dims.len()];
        let len = out.len();
        let data = out.data_mut();
        for item in data.iter_mut().take(len) {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..r {
                let mut p = self.weights[c];
                for (f, &i) in self.factors.iter().zip(&idx) {
                    p *= f.get(i, c);
                }
                acc += p;
            }
            *item = acc;
            for (i, &d) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < d {
                    break;
                }
                *i = 0;
            }
        }
        Ok(out)
    }

    /// Unfolding route: `A_n diag(α) (⋄_{l≠n, descending} A_l)ᵀ`, refolded.
    pub fn reconstruct_via_unfolding(&self, n: usize) -> Result<ComplexDenseTensor> {
        if n >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: self.order(),
            });
        }
        let dims = self.dims();
        let mut scaled = self.factors[n].clone();
        for (c, &w) in self.weights.iter().enumerate() {
            for v in scaled.col_mut(c) {
                *v *= w;
            }
        }
        let unfolded = if self.order() == 1 {
            let ones = ComplexMatrix::from_fn(1, self.rank(), |_, _| Complex64::new(1.0, 0.0));
            scaled.matmul(&ones.transpose())?
        } else {
            let kr = khatri_rao_except(&self.factors, n)?;
            scaled.matmul(&kr.transpose())?
        };
        ComplexDenseTensor::fold(&unfolded, n, &dims)
    }

    /// Equivalent model with all-ones weights: every column of every factor
    /// scaled to unit norm, leftover magnitude and phase pushed into mode 0.
    /// Zero columns are left as-is.
    pub fn normalize(&self) -> CpFactors {
        let mut factors = self.factors.clone();
        for c in 0..self.rank() {
            let mut carry = self.weights[c];
            for f in factors.iter_mut().skip(1) {
                let norm = f.col(c).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in f.col_mut(c) {
                        *v /= norm;
                    }
                    carry *= norm;
                }
            }
            for v in factors[0].col_mut(c) {
                *v *= carry;
            }
        }
        CpFactors {
            weights: vec![Complex64::new(1.0, 0.0); self.rank()],
            factors,
        }
    }

    /// Fully normalized form: unit-norm columns in every mode with the
    /// residual scale returned as weights.
    pub fn unit_columns(&self) -> CpFactors {
        let mut factors = self.factors.clone();
        let mut weights = self.weights.clone();
        for c in 0..self.rank() {
            for f in factors.iter_mut() {
                let norm = f.col(c).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in f.col_mut(c) {
                        *v /= norm;
                    }
                    weights[c] *= norm;
                } else {
                    weights[c] = Complex64::new(0.0, 0.0);
                }
            }
        }
        CpFactors { weights, factors }
    }

    /// Reorders modes: output mode `k` is input mode `order[k]`.
    pub fn permute_modes(&self, order: &[usize]) -> Result<CpFactors> {
        if order.len() != self.order() {
            return Err(Error::invalid(format!("permutation {order:?} has wrong length")));
        }
        let factors = order
            .iter()
            .map(|&o| {
                self.factors
                    .get(o)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("{order:?} is not a permutation")))
            })
            .collect::<Result<Vec<_>>>()?;
        CpFactors::new(self.weights.clone(), factors)
    }

    /// Applies the column permutation `perm` (output column k = input column perm[k]).
    pub fn permute_columns(&self, perm: &[usize]) -> CpFactors {
        CpFactors {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
            factors: self.factors.iter().map(|f| f.select_columns(perm)).collect(),
        }
    }
}

/// `A_{N-1} ⋄ … ⋄ A_{n+1} ⋄ A_{n-1} ⋄ … ⋄ A_0`, the Khatri-Rao product paired
/// with the mode-`n` unfolding.
pub fn khatri_rao_except(factors: &[ComplexMatrix], n: usize) -> Result<ComplexMatrix> {
    let list: Vec<&ComplexMatrix> = factors
        .iter()
        .enumerate()
        .rev()
        .filter(|(l, _)| *l != n)
        .map(|(_, f)| f)
        .collect();
    khatri_rao_chain(&list)
}

/// Vandermonde matrix with `[A]_{i,r} = exp(−j·i·z_r)`, `i = 0..len`.
pub fn vandermonde(z: &[f64], len: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(len, z.len(), |i, r| Complex64::from_polar(1.0, -(i as f64) * z[r]))
}

/// Single Vandermonde column.
pub fn vandermonde_vector(z: f64, len: usize) -> Vec<Complex64> {
    (0..len).map(|i| Complex64::from_polar(1.0, -(i as f64) * z)).collect()
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(z: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (z + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Numerical column rank: singular values above `1e-9 ×` the largest.
fn column_rank(m: &ComplexMatrix) -> usize {
    let sv = crate::tensor::singular_values(m);
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > KRANK_REL_TOL * largest).count()
}

fn all_subsets_full_rank(a: &ComplexMatrix, k: usize) -> bool {
    let r = a.cols();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        if column_rank(&a.select_columns(&subset)) < k {
            return false;
        }
        // next k-combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return true;
            }
            i -= 1;
            if subset[i] < r - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Kruskal rank: the largest `k` such that every `k` columns are linearly
/// independent. Exhaustive, so limited to `R ≤ 6`.
pub fn kruskal_rank(a: &ComplexMatrix) -> Result<usize> {
    let r = a.cols();
    if r > MAX_EXACT_RANK {
        return Err(Error::RankTooLarge {
            rank: r,
            reason: format!("exact Kruskal rank enumerates subsets only up to {MAX_EXACT_RANK} columns"),
        });
    }
    let mut k = 0;
    for size in 1..=r.min(a.rows()) {
        if all_subsets_full_rank(a, size) {
            k = size;
        } else {
            break;
        }
    }
    Ok(k)
}

/// Outcome of the Kruskal uniqueness test.
#[derive(Clone, Debug, PartialEq)]
pub struct Uniqueness {
    pub unique: bool,
    pub kruskal_ranks: Vec<usize>,
    /// `Σ krank − (2R + N − 1)`; nonnegative iff the test passes.
    pub slack: i64,
}

/// Sufficient uniqueness condition `Σ_n krank(A_n) ≥ 2R + N − 1`.
pub fn uniqueness_check(f: &CpFactors) -> Result<Uniqueness> {
    let kruskal_ranks = f
        .factors
        .iter()
        .map(kruskal_rank)
        .collect::<Result<Vec<_>>>()?;
    let total: usize = kruskal_ranks.iter().sum();
    let needed = 2 * f.rank() + f.order() - 1;
    let slack = total as i64 - needed as i64;
    Ok(Uniqueness {
        unique: slack >= 0,
        kruskal_ranks,
        slack,
    })
}

/// Alignment found by [`align_to_truth`].
#[derive(Clone, Debug)]
pub struct Alignment {
    pub aligned: CpFactors,
    /// `aligned` column k came from estimate column `permutation[k]`.
    pub permutation: Vec<usize>,
    pub distance_before: f64,
    pub distance_after: f64,
}

fn unit_column(col: &[Complex64]) -> Vec<Complex64> {
    let n = col.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        col.to_vec()
    } else {
        col.iter().map(|v| v / n).collect()
    }
}

/// Distance between unit-normalized columns after the best unit-modulus
/// rescaling of `est`, plus that phase.
fn column_distance(est: &[Complex64], truth: &[Complex64]) -> (f64, Complex64) {
    let e = unit_column(est);
    let t = unit_column(truth);
    let inner: Complex64 = e.iter().zip(&t).map(|(a, b)| a.conj() * b).sum();
    let phase = if inner.norm() > 0.0 {
        inner / inner.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let d: f64 = e.iter().zip(&t).map(|(a, b)| (a * phase - b).norm_sqr()).sum();
    (d, phase)
}

fn total_distance(est: &CpFactors, truth: &CpFactors, perm: &[usize], rephase: bool) -> f64 {
    let mut d = 0.0;
    for (fe, ft) in est.factors.iter().zip(&truth.factors) {
        for (k, &p) in perm.iter().enumerate() {
            if rephase {
                d += column_distance(fe.col(p), ft.col(k)).0;
            } else {
                let e = unit_column(fe.col(p));
                let t = unit_column(ft.col(k));
                d += e.iter().zip(&t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            }
        }
    }
    d.sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Finds the column permutation and per-column unit-modulus scaling of
/// `est` closest to `truth`, by exhaustive search over all `R!` orders.
/// The distance is the Frobenius distance of unit-normalized columns.
/// For metrics only.
pub fn align_to_truth(est: &CpFactors, truth: &CpFactors) -> Result<Alignment> {
    if est.rank() != truth.rank() {
        return Err(Error::dims(format!(
            "rank mismatch: estimate {} vs truth {}",
            est.rank(),
            truth.rank()
        )));
    }
    if est.dims() != truth.dims() {
        return Err(Error::dims(format!("{:?} vs {:?}", est.dims(), truth.dims())));
    }
    let r = est.rank();
    if r > MAX_EXACT_RANK {
        return Err(Error::RankTooLarge {
            rank: r,
            reason: format!("exhaustive alignment is limited to rank {MAX_EXACT_RANK}"),
        });
    }
    let identity: Vec<usize> = (0..r).collect();
    let distance_before = total_distance(est, truth, &identity, false);
    let mut best = (f64::INFINITY, identity);
    for perm in permutations(r) {
        let d = total_distance(est, truth, &perm, true);
        if d < best.0 {
            best = (d, perm);
        }
    }
    let (distance_after, permutation) = best;
    let mut aligned = est.permute_columns(&permutation);
    // per-column phase alignment; compensating phases go into the weights so
    // the reconstruction is unchanged
    for k in 0..r {
        for (n, f) in aligned.factors.iter_mut().enumerate() {
            let (_, phase) = column_distance(f.col(k), truth.factors[n].col(k));
            for v in f.col_mut(k) {
                *v *= phase;
            }
            aligned.weights[k] /= phase;
        }
    }
    Ok(Alignment {
        aligned,
        permutation,
        distance_before,
        distance_after,
    })
}

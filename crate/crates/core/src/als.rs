//! The CP-ALS operator: a line-1 update of mode 0 from the supplied
//! initial factors of modes 1..N, followed by `K` full sweeps over the modes
//! in order. Termination is by iteration count only.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cp::{khatri_rao_except, CpFactors};
use crate::error::{Error, Result};
use crate::tensor::{hermitian_eig, hermitian_solve, ComplexDenseTensor, ComplexMatrix};

/// How the `R × R` Gram system of each least-squares step is solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    /// Cholesky solve; falls back to a Tikhonov shift when not positive definite.
    #[default]
    Inverse,
    /// Cholesky solve; falls back to an eigendecomposition pseudoinverse.
    PseudoinverseFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub rank: usize,
    pub iterations: usize,
    pub solve: SolveMode,
    pub record_trace: bool,
}

impl AlsConfig {
    pub fn new(rank: usize, iterations: usize) -> Self {
        Self {
            rank,
            iterations,
            solve: SolveMode::Inverse,
            record_trace: true,
        }
    }
}

/// Per-iteration record of one run; index 0 is the state right after the
/// line-1 update, index k after sweep k.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlsTrace {
    pub objective: Vec<f64>,
    pub nse: Option<Vec<f64>>,
    /// Number of least-squares steps that needed the regularized fallback.
    pub regularized_steps: usize,
}

/// One least-squares update.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub factor: ComplexMatrix,
    pub regularized: bool,
}

/// `Y_(n) · conj(⋄_{l≠n} A_l)`, the matricized-tensor times Khatri-Rao product.
pub fn mttkrp(y: &ComplexDenseTensor, factors: &[ComplexMatrix], n: usize) -> Result<ComplexMatrix> {
    let kr = khatri_rao_except(factors, n)?.conj();
    let yn = y.matricize(n)?;
    yn.matmul(&kr)
}

/// `⊙_{l≠n} A_lᵀ A_l*`.
pub fn gram_hadamard(factors: &[ComplexMatrix], n: usize) -> Result<ComplexMatrix> {
    let r = factors[0].cols();
    let mut g = ComplexMatrix::from_fn(r, r, |_, _| Complex64::new(1.0, 0.0));
    for (l, f) in factors.iter().enumerate() {
        if l != n {
            // Aᵀ A* = conj(Aᴴ A)
            g = g.hadamard(&f.gram().conj())?;
        }
    }
    Ok(g)
}

/// Solves `X G = M` for Hermitian `G`.
fn right_solve(m: &ComplexMatrix, g: &ComplexMatrix, mode: SolveMode) -> Result<(ComplexMatrix, bool)> {
    match mode {
        SolveMode::Inverse => {
            let s = hermitian_solve(g, &m.adjoint())?;
            Ok((s.solution.adjoint(), s.regularized))
        }
        SolveMode::PseudoinverseFallback => {
            if crate::tensor::cholesky(g).is_some() {
                let s = hermitian_solve(g, &m.adjoint())?;
                return Ok((s.solution.adjoint(), false));
            }
            let eig = hermitian_eig(g, 1e-15)?;
            let largest = eig.values.first().copied().unwrap_or(0.0).abs();
            let r = g.rows();
            let inv = ComplexMatrix::from_fn(r, r, |i, j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &lam) in eig.values.iter().enumerate() {
                    if lam.abs() > 1e-12 * largest && lam != 0.0 {
                        acc += eig.vectors.get(i, k) * eig.vectors.get(j, k).conj() / lam;
                    }
                }
                acc
            });
            Ok((m.matmul(&inv)?, true))
        }
    }
}

fn check_shapes(y: &ComplexDenseTensor, factors: &[ComplexMatrix]) -> Result<usize> {
    if factors.len() != y.order() {
        return Err(Error::dims(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            y.order()
        )));
    }
    let r = factors[0].cols();
    for (n, f) in factors.iter().enumerate() {
        if f.rows() != y.dims()[n] || f.cols() != r {
            return Err(Error::dims(format!(
                "factor {n} is {}x{}, expected {}x{r}",
                f.rows(),
                f.cols(),
                y.dims()[n]
            )));
        }
    }
    Ok(r)
}

/// Least-squares update of mode `n` with the other factors fixed:
/// `Y_(n) (⋄_{l≠n} A_l*) (⊙_{l≠n} A_lᵀ A_l*)^{-1}`.
///
/// Only the factors of modes `l ≠ n` are read; `factors[n]` may hold anything
/// of the right shape.
pub fn als_step_with(
    y: &ComplexDenseTensor,
    factors: &[ComplexMatrix],
    n: usize,
    mode: SolveMode,
) -> Result<StepOutput> {
    if n >= y.order() {
        return Err(Error::ModeOutOfRange {
            mode: n,
            order: y.order(),
        });
    }
    check_shapes(y, factors)?;
    if y.order() == 1 {
        // nothing to fix; the least-squares fit of a single mode is the data
        let r = factors[0].cols();
        return Ok(StepOutput {
            factor: ComplexMatrix::from_fn(y.dims()[0], r, |i, _| y.data()[i] / r as f64),
            regularized: false,
        });
    }
    let m = mttkrp(y, factors, n)?;
    let g = gram_hadamard(factors, n)?;
    let (factor, regularized) = right_solve(&m, &g, mode)?;
    Ok(StepOutput { factor, regularized })
}

/// [`als_step_with`] on a weight-free model.
pub fn als_step(y: &ComplexDenseTensor, f: &CpFactors, n: usize) -> Result<StepOutput> {
    if !f.is_unweighted() {
        return Err(Error::invalid("als_step expects all-ones weights; normalize first"));
    }
    als_step_with(y, &f.factors, n, SolveMode::Inverse)
}

fn has_nan(m: &ComplexMatrix) -> bool {
    m.data().iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
}

/// Runs the solver from initial factors of modes 1..N (mode 0 is computed by
/// the first update). Returns the final weight-free factors and the trace.
pub fn cpals(y: &ComplexDenseTensor, init: &[ComplexMatrix], cfg: &AlsConfig) -> Result<(CpFactors, AlsTrace)> {
    cpals_traced(y, init, cfg, None)
}

/// [`cpals`] that additionally records the NSE of each iterate against `truth`.
pub fn cpals_traced(
    y: &ComplexDenseTensor,
    init: &[ComplexMatrix],
    cfg: &AlsConfig,
    truth: Option<&ComplexDenseTensor>,
) -> Result<(CpFactors, AlsTrace)> {
    if cfg.rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    if init.len() + 1 != y.order() {
        return Err(Error::dims(format!(
            "expected {} initial factors (modes 1..{}), got {}",
            y.order() - 1,
            y.order(),
            init.len()
        )));
    }
    let mut factors = Vec::with_capacity(y.order());
    factors.push(ComplexMatrix::zeros(y.dims()[0], cfg.rank));
    factors.extend(init.iter().cloned());
    check_shapes(y, &factors)?;
    if let Some(t) = truth {
        if t.dims() != y.dims() {
            return Err(Error::dims("truth tensor shape differs from input"));
        }
    }

    let mut trace = AlsTrace {
        nse: truth.map(|_| Vec::new()),
        ..AlsTrace::default()
    };
    let record = |factors: &[ComplexMatrix], trace: &mut AlsTrace| -> Result<()> {
        if !cfg.record_trace && truth.is_none() {
            return Ok(());
        }
        let model = CpFactors::unweighted(factors.to_vec())?;
        let recon = model.reconstruct_via_unfolding(0)?;
        if cfg.record_trace {
            trace.objective.push(y.sub(&recon)?.frob_norm_sq());
        }
        if let (Some(t), Some(v)) = (truth, trace.nse.as_mut()) {
            v.push(nse(&recon, t)?);
        }
        Ok(())
    };

    let first = als_step_with(y, &factors, 0, cfg.solve)?;
    if has_nan(&first.factor) {
        return Err(Error::Numerical("NaN in factor 0 during the initial update".into()));
    }
    trace.regularized_steps += first.regularized as usize;
    factors[0] = first.factor;
    record(&factors, &mut trace)?;

    for k in 1..=cfg.iterations {
        for n in 0..y.order() {
            let step = als_step_with(y, &factors, n, cfg.solve)?;
            if has_nan(&step.factor) {
                return Err(Error::Numerical(format!("NaN in factor {n} at iteration {k}")));
            }
            trace.regularized_steps += step.regularized as usize;
            factors[n] = step.factor;
        }
        record(&factors, &mut trace)?;
    }
    Ok((CpFactors::unweighted(factors)?, trace))
}

/// `‖y − ⟦α; A⟧‖_F²`.
pub fn objective(y: &ComplexDenseTensor, f: &CpFactors) -> Result<f64> {
    Ok(y.sub(&f.reconstruct_via_unfolding(0)?)?.frob_norm_sq())
}

/// `‖est − truth‖_F² / ‖truth‖_F²`.
pub fn nse(est: &ComplexDenseTensor, truth: &ComplexDenseTensor) -> Result<f64> {
    let denom = truth.frob_norm_sq();
    if denom == 0.0 {
        return Err(Error::invalid("NSE undefined for a zero-norm reference"));
    }
    Ok(est.sub(truth)?.frob_norm_sq() / denom)
}

/// Mean NSE over `(estimate, truth)` pairs.
pub fn anse<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a ComplexDenseTensor, &'a ComplexDenseTensor)>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, t) in pairs {
        sum += nse(e, t)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("ANSE of an empty set"));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cp::vandermonde;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn pseudo(rows: usize, cols: usize, seed: f64) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |i, j| {
            let x = (i * 11 + j * 5) as f64 + seed;
            c((x * 1.3).sin(), (x * 0.7).cos())
        })
    }

    #[test]
    fn exact_step_recovers_true_factor() {
        let truth = CpFactors::unweighted(vec![pseudo(4, 2, 0.0), pseudo(5, 2, 1.0), pseudo(3, 2, 2.0)]).unwrap();
        let y = truth.reconstruct().unwrap();
        for n in 0..3 {
            let mut f = truth.clone();
            f.factors[n] = ComplexMatrix::zeros(truth.factors[n].rows(), 2);
            let step = als_step(&y, &f, n).unwrap();
            assert!(step.factor.sub(&truth.factors[n]).unwrap().frob_norm() < 1e-10);
        }
    }

    #[test]
    fn zero_tensor_gives_zero_factor() {
        let f = CpFactors::unweighted(vec![pseudo(4, 2, 0.0), pseudo(5, 2, 1.0), pseudo(3, 2, 2.0)]).unwrap();
        let y = ComplexDenseTensor::zeros(&[4, 5, 3]).unwrap();
        let step = als_step(&y, &f, 1).unwrap();
        assert_eq!(step.factor.frob_norm(), 0.0);
    }

    #[test]
    fn weighted_input_rejected() {
        let f = CpFactors::new(vec![c(2.0, 0.0)], vec![pseudo(2, 1, 0.0), pseudo(2, 1, 1.0)]).unwrap();
        let y = ComplexDenseTensor::zeros(&[2, 2]).unwrap();
        assert!(als_step(&y, &f, 0).is_err());
    }

    #[test]
    fn zero_iterations_only_updates_mode0() {
        let truth = CpFactors::unweighted(vec![pseudo(4, 2, 0.0), pseudo(5, 2, 1.0), pseudo(3, 2, 2.0)]).unwrap();
        let y = truth.reconstruct().unwrap();
        let init = vec![pseudo(5, 2, 7.0), pseudo(3, 2, 8.0)];
        let (out, trace) = cpals(&y, &init, &AlsConfig::new(2, 0)).unwrap();
        assert_eq!(out.factors[1], init[0]);
        assert_eq!(out.factors[2], init[1]);
        let mut full = vec![ComplexMatrix::zeros(4, 2)];
        full.extend(init.iter().cloned());
        let expect = als_step_with(&y, &full, 0, SolveMode::Inverse).unwrap().factor;
        assert_eq!(out.factors[0], expect);
        assert_eq!(trace.objective.len(), 1);
    }

    #[test]
    fn trace_length_and_monotone() {
        let truth = CpFactors::unweighted(vec![pseudo(4, 2, 0.0), pseudo(4, 2, 1.0), pseudo(4, 2, 2.0)]).unwrap();
        let mut y = truth.reconstruct().unwrap();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += c((i as f64).sin() * 0.05, (i as f64 * 1.7).cos() * 0.05);
        }
        let init = vec![pseudo(4, 2, 3.0), pseudo(4, 2, 4.0)];
        let (_, trace) = cpals_traced(&y, &init, &AlsConfig::new(2, 7), Some(&truth.reconstruct().unwrap())).unwrap();
        assert_eq!(trace.objective.len(), 8);
        assert_eq!(trace.nse.as_ref().unwrap().len(), 8);
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
    }

    #[test]
    fn metrics_basic_cases() {
        let t = ComplexDenseTensor::from_fn(&[2, 3], |i| c(i[0] as f64 + 1.0, i[1] as f64)).unwrap();
        assert_eq!(nse(&t, &t).unwrap(), 0.0);
        assert!((nse(&t.scale(c(2.0, 0.0)), &t).unwrap() - 1.0).abs() < 1e-15);
        let z = ComplexDenseTensor::zeros(&[2, 3]).unwrap();
        assert!(nse(&t, &z).is_err());
        assert!(anse(std::iter::empty()).is_err());
        let a = anse([(&t, &t), (&t.scale(c(2.0, 0.0)), &t)]).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pseudoinverse_mode_handles_rank_deficient_gram() {
        let col = vandermonde(&[0.4], 4);
        let dup = ComplexMatrix::from_columns(&[col.data().to_vec(), col.data().to_vec()]).unwrap();
        let y = CpFactors::unweighted(vec![pseudo(3, 2, 0.0), dup.clone(), dup.clone()])
            .unwrap()
            .reconstruct()
            .unwrap();
        let factors = vec![ComplexMatrix::zeros(3, 2), dup.clone(), dup];
        let out = als_step_with(&y, &factors, 0, SolveMode::PseudoinverseFallback).unwrap();
        assert!(out.regularized);
        assert!(out.factor.data().iter().all(|v| v.re.is_finite()));
    }

    #[test]
    fn shape_errors() {
        let y = ComplexDenseTensor::zeros(&[3, 3, 3]).unwrap();
        assert!(cpals(&y, &[pseudo(3, 2, 0.0)], &AlsConfig::new(2, 1)).is_err());
        assert!(cpals(&y, &[pseudo(3, 2, 0.0), pseudo(4, 2, 0.0)], &AlsConfig::new(2, 1)).is_err());
    }
}

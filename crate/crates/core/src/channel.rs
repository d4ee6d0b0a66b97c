//! Geometry-based mmWave MIMO-OFDM channels, pilot transmission, coarse
//! least-squares estimation, an MMSE baseline and parameter extraction.
//!
//! Channel tensors are laid out `MS antennas × BS antennas × subcarriers`
//! (`I_1 × I_2 × M`).

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cp::{vandermonde, vandermonde_vector, wrap_angle, CpFactors};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ComplexDenseTensor, ComplexMatrix};

/// Sampling rate, subcarrier count and element spacing shared by all paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConstants {
    pub fs_hz: f64,
    pub total_subcarriers: usize,
    /// Element spacing over wavelength.
    pub spacing: f64,
    pub max_delay_ns: f64,
}

impl Default for ChannelConstants {
    fn default() -> Self {
        Self {
            fs_hz: 0.32e9,
            total_subcarriers: 128,
            spacing: 0.5,
            max_delay_ns: 100.0,
        }
    }
}

/// Per-path parameters. Angles are spatial frequencies `2π d sin(φ)/λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub aoa: Vec<f64>,
    pub aod: Vec<f64>,
    pub delay_ns: Vec<f64>,
    pub gain: Vec<Complex64>,
    pub constants: ChannelConstants,
}

impl ChannelParams {
    pub fn paths(&self) -> usize {
        self.gain.len()
    }

    /// Generator of the subcarrier Vandermonde for each path.
    pub fn delay_generators(&self) -> Vec<f64> {
        self.delay_ns
            .iter()
            .map(|&t| delay_generator(t, &self.constants))
            .collect()
    }
}

/// `2π τ f_s / M₀` for a delay in nanoseconds.
pub fn delay_generator(delay_ns: f64, c: &ChannelConstants) -> f64 {
    2.0 * PI * delay_ns * 1e-9 * c.fs_hz / c.total_subcarriers as f64
}

/// Inverse of [`delay_generator`].
pub fn delay_from_generator(z: f64, c: &ChannelConstants) -> f64 {
    z * c.total_subcarriers as f64 / (2.0 * PI * c.fs_hz) * 1e9
}

/// `2π (d/λ) sin(φ)`.
pub fn spatial_angle(physical: f64, spacing: f64) -> f64 {
    2.0 * PI * spacing * physical.sin()
}

/// Physical angles and delays uniform, gains `CN(0, 1)`.
pub fn gen_params<R: Rng + ?Sized>(paths: usize, c: &ChannelConstants, rng: &mut R) -> ChannelParams {
    let mut aoa = Vec::with_capacity(paths);
    let mut aod = Vec::with_capacity(paths);
    let mut delay_ns = Vec::with_capacity(paths);
    let mut gain = Vec::with_capacity(paths);
    for _ in 0..paths {
        aoa.push(spatial_angle(rng.random_range(-PI / 2.0..PI / 2.0), c.spacing));
        aod.push(spatial_angle(rng.random_range(-PI / 2.0..PI / 2.0), c.spacing));
        delay_ns.push(rng.random_range(0.0..c.max_delay_ns));
        gain.push(rng::complex_normal(rng, 1.0));
    }
    ChannelParams {
        aoa,
        aod,
        delay_ns,
        gain,
        constants: *c,
    }
}

/// Pilot block of `len` consecutive subcarriers starting at `start`
/// (1-based, as subcarriers are numbered `1..=M₀`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub len: usize,
}

/// Subcarrier factor: rows `start..start+len−1` of the `M₀`-row delay
/// Vandermonde.
pub fn subcarrier_factor(z: &[f64], block: Block) -> ComplexMatrix {
    ComplexMatrix::from_fn(block.len, z.len(), |i, r| {
        Complex64::from_polar(1.0, -((block.start - 1 + i) as f64) * z[r])
    })
}

/// Training-block channel and its CP factors (weights carry the gains
/// times `e^{−j z_3}`).
pub fn build_block_channel(p: &ChannelParams, i1: usize, i2: usize, block: Block) -> Result<(ComplexDenseTensor, CpFactors)> {
    if block.start == 0 || block.len == 0 || block.start + block.len - 1 > p.constants.total_subcarriers {
        return Err(Error::invalid(format!(
            "block {}..{} outside subcarriers 1..={}",
            block.start,
            block.start + block.len.saturating_sub(1),
            p.constants.total_subcarriers
        )));
    }
    if p.paths() == 0 {
        return Err(Error::invalid("channel needs at least one path"));
    }
    let z3 = p.delay_generators();
    let weights = p
        .gain
        .iter()
        .zip(&z3)
        .map(|(b, z)| b * Complex64::from_polar(1.0, -z))
        .collect();
    let factors = vec![
        vandermonde(&p.aoa, i1),
        vandermonde(&p.aod, i2),
        subcarrier_factor(&z3, block),
    ];
    let cp = CpFactors::new(weights, factors)?;
    Ok((cp.reconstruct()?, cp))
}

fn dft(n: usize) -> ComplexMatrix {
    let s = 1.0 / (n as f64).sqrt();
    ComplexMatrix::from_fn(n, n, |i, k| Complex64::from_polar(s, -2.0 * PI * (i * k) as f64 / n as f64))
}

/// Combiner `F_1`, beamformer `F_2` and pilot symbols `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotConfig {
    f1: ComplexMatrix,
    f2: ComplexMatrix,
    x: Vec<Complex64>,
    subcarriers: usize,
}

impl PilotConfig {
    /// Unitary DFT combiner and beamformer with all-ones pilots.
    pub fn dft(i1: usize, i2: usize, subcarriers: usize) -> Self {
        Self {
            f1: dft(i1),
            f2: dft(i2),
            x: vec![Complex64::new(1.0, 0.0); i2],
            subcarriers,
        }
    }

    /// Custom matrices; rejects non-orthogonal rows or zero pilots.
    pub fn new(f1: ComplexMatrix, f2: ComplexMatrix, x: Vec<Complex64>, subcarriers: usize) -> Result<Self> {
        let check = |f: &ComplexMatrix, name: &str| -> Result<()> {
            if f.rows() != f.cols() {
                return Err(Error::invalid(format!("{name} must be square")));
            }
            let d = f.matmul(&f.adjoint())?.sub(&ComplexMatrix::identity(f.rows()))?.frob_norm();
            if d > 1e-10 {
                return Err(Error::invalid(format!("{name} rows are not orthonormal (defect {d:.2e})")));
            }
            Ok(())
        };
        check(&f1, "F1")?;
        check(&f2, "F2")?;
        if x.len() != f2.cols() || x.iter().any(|v| v.norm() == 0.0) {
            return Err(Error::invalid("pilot vector must have one nonzero symbol per beam"));
        }
        Ok(Self { f1, f2, x, subcarriers })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.f1.rows(), self.f2.rows(), self.subcarriers]
    }

    pub fn combiner(&self) -> &ComplexMatrix {
        &self.f1
    }

    pub fn beamformer(&self) -> &ComplexMatrix {
        &self.f2
    }

    /// `diag(x) F_2ᵀ`.
    fn transmit(&self) -> ComplexMatrix {
        let t = self.f2.transpose();
        ComplexMatrix::from_fn(t.rows(), t.cols(), |i, j| self.x[i] * t.get(i, j))
    }

    /// `F_2* diag(x)⁻¹`, the inverse of [`Self::transmit`].
    fn untransmit(&self) -> ComplexMatrix {
        let c = self.f2.conj();
        ComplexMatrix::from_fn(c.rows(), c.cols(), |i, j| c.get(i, j) / self.x[j])
    }

    fn check(&self, t: &ComplexDenseTensor) -> Result<()> {
        if t.dims() != self.dims() {
            return Err(Error::dims(format!(
                "tensor {:?} does not match pilot configuration {:?}",
                t.dims(),
                self.dims()
            )));
        }
        Ok(())
    }
}

/// Noise variance giving `snr_db` for this channel realization:
/// `‖H‖_F² / (numel · 10^{SNR/10})`.
pub fn noise_variance(h: &ComplexDenseTensor, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR {snr_db} dB is not finite")));
    }
    Ok(h.frob_norm_sq() / (h.len() as f64 * 10f64.powf(snr_db / 10.0)))
}

/// `H ×₁ F_1ᴴ ×₂ diag(x)F_2ᵀ + N ×₁ F_1ᴴ` with `N` i.i.d. `CN(0, σ²)`.
pub fn received_signal<R: Rng + ?Sized>(
    h: &ComplexDenseTensor,
    cfg: &PilotConfig,
    noise_var: f64,
    rng: &mut R,
) -> Result<ComplexDenseTensor> {
    cfg.check(h)?;
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid(format!("noise variance {noise_var} is invalid")));
    }
    let f1h = cfg.f1.adjoint();
    let signal = h.mode_n_product(&f1h, 0)?.mode_n_product(&cfg.transmit(), 1)?;
    if noise_var == 0.0 {
        return Ok(signal);
    }
    let n = ComplexDenseTensor::from_fn(h.dims(), |_| rng::complex_normal(rng, noise_var))?;
    signal.add(&n.mode_n_product(&f1h, 0)?)
}

/// `Y ×₁ F_1 ×₂ F_2* diag(x)⁻¹`; for all-ones pilots this is `Y ×₁ F_1 ×₂ F_2*`.
pub fn coarse_estimate(y: &ComplexDenseTensor, cfg: &PilotConfig) -> Result<ComplexDenseTensor> {
    cfg.check(y)?;
    y.mode_n_product(&cfg.f1, 0)?.mode_n_product(&cfg.untransmit(), 1)
}

/// Linear MMSE estimator with an empirical channel covariance.
///
/// `C_h` is the sample second moment of the training coarse estimates minus
/// their mean noise variance times the identity, with negative eigenvalues
/// clamped to zero. Estimates are `C_h (C_h + σ²I)⁻¹ Xᴴ y`.
pub struct MmseEstimator {
    dims: Vec<usize>,
    vectors: DMatrix<Complex64>,
    values: Vec<f64>,
    /// Eigenvalues that were clamped to zero.
    pub floored: usize,
    /// Mean noise variance subtracted from the second moment.
    pub noise_bias: f64,
}

impl MmseEstimator {
    /// Fits on coarse estimates and the noise variance each was taken at.
    pub fn fit(coarse: &[ComplexDenseTensor], noise_vars: &[f64]) -> Result<Self> {
        let first = coarse.first().ok_or_else(|| Error::invalid("MMSE needs training samples"))?;
        if noise_vars.len() != coarse.len() {
            return Err(Error::dims("one noise variance per training sample is required"));
        }
        let dims = first.dims().to_vec();
        let n = first.len();
        let mut cov = DMatrix::<Complex64>::zeros(n, n);
        for t in coarse {
            if t.dims() != dims.as_slice() {
                return Err(Error::dims("training samples differ in shape"));
            }
            let v = nalgebra::DVector::from_column_slice(t.data());
            cov.ger(Complex64::new(1.0, 0.0), &v, &v.conjugate(), Complex64::new(1.0, 0.0));
        }
        cov /= Complex64::new(coarse.len() as f64, 0.0);
        let noise_bias = noise_vars.iter().sum::<f64>() / noise_vars.len() as f64;
        for i in 0..n {
            cov[(i, i)] -= Complex64::new(noise_bias, 0.0);
        }
        // symmetrize against accumulated rounding
        let cov = (&cov + cov.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(cov);
        let mut floored = 0;
        let values = eig
            .eigenvalues
            .iter()
            .map(|&l| {
                if l < 0.0 {
                    floored += 1;
                    0.0
                } else {
                    l
                }
            })
            .collect();
        Ok(Self {
            dims,
            vectors: eig.eigenvectors,
            values,
            floored,
            noise_bias,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// `C_h (C_h + σ²I)⁻¹` applied to a coarse estimate `Xᴴy`.
    pub fn estimate_from_coarse(&self, coarse: &ComplexDenseTensor, noise_var: f64) -> Result<ComplexDenseTensor> {
        if coarse.dims() != self.dims.as_slice() {
            return Err(Error::dims("sample shape differs from the training set"));
        }
        let v = nalgebra::DVector::from_column_slice(coarse.data());
        let mut proj = self.vectors.ad_mul(&v);
        for (p, &c) in proj.iter_mut().zip(&self.values) {
            let denom = c + noise_var;
            *p *= if denom > 0.0 { c / denom } else { 0.0 };
        }
        let out = &self.vectors * proj;
        ComplexDenseTensor::new(self.dims.clone(), out.as_slice().to_vec())
    }

    /// Estimate from the received signal.
    pub fn estimate(&self, y: &ComplexDenseTensor, cfg: &PilotConfig, noise_var: f64) -> Result<ComplexDenseTensor> {
        let xh_y = adjoint_measurement(y, cfg)?;
        self.estimate_from_coarse(&xh_y, noise_var)
    }

    /// Explicit `Ŵ = C_h (C_h + σ²I)⁻¹ Xᴴ` with `X = I_M ⊗ diag(x)F_2ᵀ ⊗ F_1ᴴ`.
    pub fn weight_matrix(&self, cfg: &PilotConfig, noise_var: f64) -> Result<ComplexMatrix> {
        let [i1, i2, m] = cfg.dims();
        if [i1, i2, m].as_slice() != self.dims.as_slice() {
            return Err(Error::dims("pilot configuration differs from the training set"));
        }
        let n = i1 * i2 * m;
        let shrink: Vec<Complex64> = self
            .values
            .iter()
            .map(|&c| {
                let d = c + noise_var;
                Complex64::new(if d > 0.0 { c / d } else { 0.0 }, 0.0)
            })
            .collect();
        let scaled = DMatrix::from_fn(n, n, |i, k| self.vectors[(i, k)] * shrink[k]);
        let filt = scaled * self.vectors.adjoint();
        let x = ComplexMatrix::identity(m)
            .kron(&cfg.transmit())
            .kron(&cfg.f1.adjoint());
        let xh = DMatrix::from_column_slice(n, n, x.adjoint().data());
        let w = filt * xh;
        ComplexMatrix::new(n, n, w.as_slice().to_vec())
    }
}

/// `Xᴴ vec(y)` folded back into a tensor.
fn adjoint_measurement(y: &ComplexDenseTensor, cfg: &PilotConfig) -> Result<ComplexDenseTensor> {
    cfg.check(y)?;
    y.mode_n_product(&cfg.f1, 0)?.mode_n_product(&cfg.transmit().adjoint(), 1)
}

const GRID: usize = 4096;
const GOLDEN_TOL: f64 = 1e-8;

fn correlation(a: &[Complex64], z: f64) -> f64 {
    let step = Complex64::from_polar(1.0, -z);
    let mut w = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for v in a {
        acc += v.conj() * w;
        w *= step;
    }
    acc.norm()
}

/// Generating frequency `z ∈ (−π, π]` of the Vandermonde vector closest to
/// `a`, i.e. the maximizer of `|aᴴ Van(z)| / ‖a‖`: 4096-point grid, then
/// golden-section search over the neighbouring cells to `|Δz| < 1e-8`,
/// then Newton polishing of the squared correlation.
pub fn extract_generating_vector(a: &[Complex64]) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::invalid("need at least two entries to extract a generator"));
    }
    let norm = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::invalid("cannot extract a generator from a zero vector"));
    }
    let a: Vec<Complex64> = a.iter().map(|v| v / norm).collect();
    let h = 2.0 * PI / GRID as f64;
    let grid_point = |k: usize| -PI + (k + 1) as f64 * h;
    let best = (0..GRID)
        .map(|k| (k, correlation(&a, grid_point(k))))
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let center = grid_point(best.0);

    let (mut lo, mut hi) = (center - h, center + h);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (correlation(&a, x1), correlation(&a, x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = correlation(&a, x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = correlation(&a, x1);
        }
    }
    let mut z = 0.5 * (lo + hi);

    // Newton on g(z) = |s(z)|², s(z) = Σ a_i* e^{−j i z}
    for _ in 0..3 {
        let (mut s, mut s1, mut s2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for (i, v) in a.iter().enumerate() {
            let e = v.conj() * Complex64::from_polar(1.0, -(i as f64) * z);
            let fi = i as f64;
            s += e;
            s1 += e * Complex64::new(0.0, -fi);
            s2 += e * (-fi * fi);
        }
        let g1 = 2.0 * (s.conj() * s1).re;
        let g2 = 2.0 * (s1.norm_sqr() + (s.conj() * s2).re);
        if g2 >= 0.0 {
            break;
        }
        let next = z - g1 / g2;
        if (next - z).abs() > GOLDEN_TOL || correlation(&a, next) < correlation(&a, z) * (1.0 - 1e-15) {
            break;
        }
        z = next;
    }
    Ok(wrap_angle(z))
}

/// Sorted-parameter errors of one estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    pub aoa: f64,
    pub aod: f64,
    pub delay: f64,
    pub gain: f64,
}

/// Parameters recovered from CP factors of a block channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedParams {
    pub aoa: Vec<f64>,
    pub aod: Vec<f64>,
    pub delay_ns: Vec<f64>,
    pub gain: Vec<Complex64>,
}

/// Generators of every column of every factor, delays converted to ns, and
/// gains refitted by least squares against the estimated tensor.
pub fn extract_params(est: &CpFactors, block: Block, c: &ChannelConstants) -> Result<ExtractedParams> {
    if est.order() != 3 {
        return Err(Error::invalid("channel factors must have three modes"));
    }
    let gen = |m: usize| -> Result<Vec<f64>> {
        (0..est.rank())
            .map(|r| extract_generating_vector(est.factors[m].col(r)))
            .collect()
    };
    let aoa = gen(0)?;
    let aod = gen(1)?;
    let z3: Vec<f64> = gen(2)?
        .into_iter()
        .map(|z| if z < 0.0 && delay_from_generator(z + 2.0 * PI, c) <= 2.0 * c.max_delay_ns { z + 2.0 * PI } else { z })
        .collect();
    let delay_ns = z3.iter().map(|&z| delay_from_generator(z, c)).collect();

    let model = CpFactors::unweighted(vec![
        vandermonde(&aoa, est.dims()[0]),
        vandermonde(&aod, est.dims()[1]),
        subcarrier_factor(&z3, block),
    ])?;
    let atoms: Vec<Vec<Complex64>> = (0..est.rank())
        .map(|r| {
            let cols: Vec<&[Complex64]> = model.factors.iter().map(|f| f.col(r)).collect();
            ComplexDenseTensor::outer(&cols).map(ComplexDenseTensor::into_data)
        })
        .collect::<Result<_>>()?;
    let target = est.reconstruct()?;
    let r = est.rank();
    let gram = ComplexMatrix::from_fn(r, r, |i, j| atoms[i].iter().zip(&atoms[j]).map(|(a, b)| a.conj() * b).sum());
    let rhs = ComplexMatrix::from_fn(r, 1, |i, _| atoms[i].iter().zip(target.data()).map(|(a, b)| a.conj() * b).sum());
    let coeffs = crate::tensor::hermitian_solve(&gram, &rhs)?.solution;
    let gain = (0..r)
        .map(|k| coeffs.get(k, 0) * Complex64::from_polar(1.0, z3[k]))
        .collect();
    Ok(ExtractedParams {
        aoa,
        aod,
        delay_ns,
        gain,
    })
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn sorted_nse(est: &[f64], truth: &[f64]) -> f64 {
    let (e, t) = (sorted_desc(est), sorted_desc(truth));
    let num: f64 = e.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = t.iter().map(|b| b * b).sum();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn sorted_gain_nse(est: &[Complex64], truth: &[Complex64]) -> f64 {
    let sort = |v: &[Complex64]| {
        let mut s = v.to_vec();
        s.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        s
    };
    let (e, t) = (sort(est), sort(truth));
    let num: f64 = e.iter().zip(&t).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = t.iter().map(|b| b.norm_sqr()).sum();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Per-parameter normalized squared errors after sorting both sides in
/// descending order (gains by magnitude).
pub fn param_errors(est: &ExtractedParams, truth: &ChannelParams) -> Result<ParamErrors> {
    if est.gain.len() != truth.paths() {
        return Err(Error::dims(format!(
            "estimate has {} paths, truth has {}",
            est.gain.len(),
            truth.paths()
        )));
    }
    Ok(ParamErrors {
        aoa: sorted_nse(&est.aoa, &truth.aoa),
        aod: sorted_nse(&est.aod, &truth.aod),
        delay: sorted_nse(&est.delay_ns, &truth.delay_ns),
        gain: sorted_gain_nse(&est.gain, &truth.gain),
    })
}

/// Mean of per-sample parameter errors.
pub fn mean_param_errors(errs: &[ParamErrors]) -> Result<ParamErrors> {
    if errs.is_empty() {
        return Err(Error::invalid("no samples to average"));
    }
    let n = errs.len() as f64;
    Ok(ParamErrors {
        aoa: errs.iter().map(|e| e.aoa).sum::<f64>() / n,
        aod: errs.iter().map(|e| e.aod).sum::<f64>() / n,
        delay: errs.iter().map(|e| e.delay).sum::<f64>() / n,
        gain: errs.iter().map(|e| e.gain).sum::<f64>() / n,
    })
}

/// Empirical CDF `(x_k, k/n)` over the sorted values.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(k, x)| (x, (k + 1) as f64 / n)).collect()
}

/// The generating vector `Van(z)` of length `len`, for tests and examples.
pub fn steering(z: f64, len: usize) -> Vec<Complex64> {
    vandermonde_vector(z, len)
}

//! Starting factors for modes 1..N of the ALS operator.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{pack_input, unpack_output, MlpModel};
use crate::rng;
use crate::tensor::{hermitian_eig, ComplexDenseTensor, ComplexMatrix};

const JACOBI_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Random,
    Svd,
    Learned,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMethod::Random),
            "svd" => Ok(InitMethod::Svd),
            "dl" | "learned" => Ok(InitMethod::Learned),
            other => Err(Error::invalid(format!("unknown initializer `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMethod::Random => "random",
            InitMethod::Svd => "svd",
            InitMethod::Learned => "dl",
        })
    }
}

/// Elementwise uniform distribution for random starts. With `complex`, the
/// real and imaginary parts are drawn independently from the same bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformInit {
    pub low: f64,
    pub high: f64,
    pub complex: bool,
}

impl Default for UniformInit {
    fn default() -> Self {
        Self {
            low: 0.0,
            high: 1.0,
            complex: false,
        }
    }
}

/// Draws factors for modes 1..N of a tensor with the given `dims`.
pub fn random_init<R: Rng + ?Sized>(dims: &[usize], rank: usize, dist: &UniformInit, rng: &mut R) -> Vec<ComplexMatrix> {
    let width = dist.high - dist.low;
    let draw = |rng: &mut R| dist.low + width * rng.random::<f64>();
    dims.iter()
        .skip(1)
        .map(|&rows| {
            ComplexMatrix::from_fn(rows, rank, |_, _| {
                let re = draw(rng);
                let im = if dist.complex { draw(rng) } else { 0.0 };
                Complex64::new(re, im)
            })
        })
        .collect()
}

/// [`random_init`] from a seed.
pub fn random_init_seeded(dims: &[usize], rank: usize, dist: &UniformInit, seed: u64) -> Vec<ComplexMatrix> {
    random_init(dims, rank, dist, &mut rng::stream(seed, 0))
}

/// Top eigenvectors of `m mᴴ`, i.e. the leading left singular vectors of `m`.
#[derive(Clone, Debug)]
pub struct LeadingEigvecs {
    pub vectors: ComplexMatrix,
    /// Eigenvalues of `m mᴴ` (squared singular values), descending.
    pub values: Vec<f64>,
    /// The input had no energy; `vectors` is an arbitrary orthonormal basis.
    pub degenerate: bool,
}

/// Leading `r` eigenvectors of the Hermitian Gram `m mᴴ` by cyclic Jacobi,
/// in descending eigenvalue order, with the first nonzero entry of each
/// vector made real and positive.
pub fn leading_eigvecs(m: &ComplexMatrix, r: usize) -> Result<LeadingEigvecs> {
    if r == 0 || r > m.rows() {
        return Err(Error::RankTooLarge {
            rank: r,
            reason: format!("needs 1 ≤ R ≤ {} rows", m.rows()),
        });
    }
    let gram = m.matmul(&m.adjoint())?;
    let eig = hermitian_eig(&gram, JACOBI_TOL)?;
    let mut vectors = eig.vectors.select_columns(&(0..r).collect::<Vec<_>>());
    for k in 0..r {
        let col = vectors.col_mut(k);
        let scale = col.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        if let Some(first) = col.iter().copied().find(|v| v.norm() > 1e-8 * scale) {
            let phase = first.conj() / first.norm();
            for v in col.iter_mut() {
                *v *= phase;
            }
        }
    }
    Ok(LeadingEigvecs {
        vectors,
        degenerate: eig.values.first().is_none_or(|&l| l <= 0.0),
        values: eig.values[..r].to_vec(),
    })
}

/// SVD-based starting point.
#[derive(Clone, Debug)]
pub struct SvdInit {
    pub factors: Vec<ComplexMatrix>,
    pub degenerate: bool,
}

/// For each mode 1..N, the `rank` leading left singular vectors of the
/// mode unfolding.
pub fn svd_init(y: &ComplexDenseTensor, rank: usize) -> Result<SvdInit> {
    let mut factors = Vec::with_capacity(y.order().saturating_sub(1));
    let mut degenerate = false;
    for n in 1..y.order() {
        if rank > y.dims()[n] {
            return Err(Error::RankTooLarge {
                rank,
                reason: format!("mode {n} has only {} rows", y.dims()[n]),
            });
        }
        let lead = leading_eigvecs(&y.matricize(n)?, rank)?;
        degenerate |= lead.degenerate;
        factors.push(lead.vectors);
    }
    Ok(SvdInit { factors, degenerate })
}

/// Network-generated starting factors: deterministic forward pass with
/// dropout off, output unpacked per mode.
pub fn learned_init(model: &MlpModel, y: &ComplexDenseTensor) -> Result<Vec<ComplexMatrix>> {
    let arch = model.arch();
    if arch.dims != y.dims() {
        return Err(Error::dims(format!(
            "model expects tensors of shape {:?}, got {:?}",
            arch.dims,
            y.dims()
        )));
    }
    let input = pack_input(y, arch.complex);
    let out = model.infer(&input)?;
    unpack_output(&out, &arch.dims, arch.rank, arch.complex)
}

/// Dispatch used by the CLI and evaluation code.
pub fn initialize(
    method: InitMethod,
    y: &ComplexDenseTensor,
    rank: usize,
    dist: &UniformInit,
    seed: u64,
    model: Option<&MlpModel>,
) -> Result<Vec<ComplexMatrix>> {
    match method {
        InitMethod::Random => Ok(random_init_seeded(y.dims(), rank, dist, seed)),
        InitMethod::Svd => Ok(svd_init(y, rank)?.factors),
        InitMethod::Learned => {
            let model = model.ok_or_else(|| Error::invalid("learned initialization needs a model"))?;
            if model.arch().rank != rank {
                return Err(Error::dims(format!(
                    "model rank {} differs from requested rank {rank}",
                    model.arch().rank
                )));
            }
            learned_init(model, y)
        }
    }
}

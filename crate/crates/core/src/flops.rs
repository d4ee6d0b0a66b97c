//! Analytic complex-flop (cflop) accounting of the initializers and of one
//! ALS iteration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::nn::MlpArch;

/// Real flops per complex multiplication.
pub const REAL_PER_COMPLEX: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    /// `AᴴA` for an `m × n` matrix.
    Gram { m: u64, n: u64 },
    /// `(m × n)·(n × l)`.
    MatMul { m: u64, n: u64, l: u64 },
    /// `(m × n) ⋄ (k × n)`.
    KhatriRao { m: u64, k: u64, n: u64 },
    /// Elementwise product of two `m × n` matrices.
    Hadamard { m: u64, n: u64 },
    /// Inverse of an `n × n` Hermitian matrix.
    Inverse { n: u64 },
    /// SVD of an `n × n` matrix.
    Svd { n: u64 },
}

impl Primitive {
    pub fn cflops(&self) -> u64 {
        match *self {
            // mn² + mn − n²/2 − n/2, exact since n² + n is even
            Primitive::Gram { m, n } => m * n * n + m * n - (n * n + n) / 2,
            Primitive::MatMul { m, n, l } => 2 * m * n * l - m * l,
            Primitive::KhatriRao { m, k, n } => m * k * n,
            Primitive::Hadamard { m, n } => m * n,
            Primitive::Inverse { n } => n * n * n + n * n + n,
            Primitive::Svd { n } => (8 * n * n * n).div_ceil(3),
        }
    }

    fn dims_positive(&self) -> bool {
        match *self {
            Primitive::Gram { m, n } | Primitive::Hadamard { m, n } => m > 0 && n > 0,
            Primitive::MatMul { m, n, l } => m > 0 && n > 0 && l > 0,
            Primitive::KhatriRao { m, k, n } => m > 0 && k > 0 && n > 0,
            Primitive::Inverse { n } | Primitive::Svd { n } => n > 0,
        }
    }
}

/// Cost of a primitive from its name and dims, e.g. `("matmul", [2, 3, 4])`.
pub fn cflops_primitive(kind: &str, dims: &[u64]) -> Result<u64> {
    let p = match (kind, dims) {
        ("gram", &[m, n]) => Primitive::Gram { m, n },
        ("matmul", &[m, n, l]) => Primitive::MatMul { m, n, l },
        ("khatri_rao", &[m, k, n]) => Primitive::KhatriRao { m, k, n },
        ("hadamard", &[m, n]) => Primitive::Hadamard { m, n },
        ("inverse", &[n]) => Primitive::Inverse { n },
        ("svd", &[n]) => Primitive::Svd { n },
        ("gram" | "matmul" | "khatri_rao" | "hadamard" | "inverse" | "svd", _) => {
            return Err(Error::invalid(format!("wrong number of dims for `{kind}`: {dims:?}")))
        }
        _ => return Err(Error::invalid(format!("unknown primitive `{kind}`"))),
    };
    if !p.dims_positive() {
        return Err(Error::invalid(format!("dims must be positive: {dims:?}")));
    }
    Ok(p.cflops())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostItem {
    pub phase: Phase,
    pub label: String,
    pub primitive: Primitive,
    /// Times the item occurs within its phase.
    pub count: u64,
    pub cflops: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Iteration,
}

/// Real-flop breakdown of the initializer network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpFlops {
    /// `(in, out, in·out)` per affine layer.
    pub layers: Vec<(u64, u64, u64)>,
    /// `Σ in·out`, one multiply-accumulate per weight.
    pub weight_flops: u64,
    /// One addition per bias entry, itemized separately.
    pub bias_flops: u64,
    /// `⌈weight_flops / 6⌉`.
    pub cflops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub iterations: usize,
    pub method: InitMethod,
    pub init_cflops: u64,
    pub per_iteration_cflops: u64,
    /// `init + iterations · per_iteration`.
    pub total_cflops: u64,
    pub breakdown: Vec<CostItem>,
    pub mlp: Option<MlpFlops>,
}

impl CostReport {
    /// Sum over the breakdown, weighting iteration items by the iteration count.
    pub fn breakdown_total(&self) -> u64 {
        self.breakdown
            .iter()
            .map(|i| match i.phase {
                Phase::Init => i.cflops,
                Phase::Iteration => i.cflops * self.iterations as u64,
            })
            .sum()
    }
}

fn item(phase: Phase, label: String, primitive: Primitive, count: u64) -> CostItem {
    CostItem {
        phase,
        label,
        primitive,
        count,
        cflops: primitive.cflops() * count,
    }
}

pub fn mlp_flops(arch: &MlpArch) -> MlpFlops {
    let layers: Vec<(u64, u64, u64)> = arch
        .layer_shapes()
        .into_iter()
        .map(|(i, o)| (i as u64, o as u64, (i * o) as u64))
        .collect();
    let weight_flops = layers.iter().map(|l| l.2).sum();
    let bias_flops = layers.iter().map(|l| l.1).sum();
    MlpFlops {
        layers,
        weight_flops,
        bias_flops,
        cflops: u64::div_ceil(weight_flops, REAL_PER_COMPLEX),
    }
}

/// Operation-by-operation cost of `method` followed by `iterations` ALS
/// sweeps. The per-mode update evaluates `P = (⋄ A_l*)·(⊛ A_lᵀA_l*)⁻¹`
/// first and then `Y_(n)·P`.
pub fn cost_profile(dims: &[usize], rank: usize, iterations: usize, method: InitMethod, arch: Option<&MlpArch>) -> Result<CostReport> {
    if dims.len() < 2 || dims.contains(&0) || rank == 0 {
        return Err(Error::invalid(format!("invalid dims {dims:?} or rank {rank}")));
    }
    let d: Vec<u64> = dims.iter().map(|&x| x as u64).collect();
    let r = rank as u64;
    let total: u64 = d.iter().product();
    let mut breakdown = Vec::new();

    for n in 0..d.len() {
        let others: Vec<usize> = (0..d.len()).rev().filter(|&l| l != n).collect();
        let j = total / d[n];
        let mut rows = d[others[0]];
        for &l in &others[1..] {
            breakdown.push(item(
                Phase::Iteration,
                format!("mode {n}: Khatri-Rao"),
                Primitive::KhatriRao { m: rows, k: d[l], n: r },
                1,
            ));
            rows *= d[l];
        }
        for &l in &others {
            breakdown.push(item(
                Phase::Iteration,
                format!("mode {n}: Gram of A_{l}"),
                Primitive::Gram { m: d[l], n: r },
                1,
            ));
        }
        if others.len() > 1 {
            breakdown.push(item(
                Phase::Iteration,
                format!("mode {n}: Gram Hadamard"),
                Primitive::Hadamard { m: r, n: r },
                others.len() as u64 - 1,
            ));
        }
        breakdown.push(item(Phase::Iteration, format!("mode {n}: inverse"), Primitive::Inverse { n: r }, 1));
        breakdown.push(item(
            Phase::Iteration,
            format!("mode {n}: Khatri-Rao times inverse"),
            Primitive::MatMul { m: j, n: r, l: r },
            1,
        ));
        breakdown.push(item(
            Phase::Iteration,
            format!("mode {n}: unfolding product"),
            Primitive::MatMul { m: d[n], n: j, l: r },
            1,
        ));
    }

    let mut mlp = None;
    match method {
        InitMethod::Random => {}
        InitMethod::Svd => {
            for n in 1..d.len() {
                let j = total / d[n];
                breakdown.push(item(
                    Phase::Init,
                    format!("mode {n}: unfolding Gram"),
                    Primitive::Gram { m: j, n: d[n] },
                    1,
                ));
                breakdown.push(item(Phase::Init, format!("mode {n}: SVD"), Primitive::Svd { n: d[n] }, 1));
            }
        }
        InitMethod::Learned => {
            let arch = arch.ok_or_else(|| Error::invalid("learned initialization cost needs the network architecture"))?;
            if arch.dims != dims || arch.rank != rank {
                return Err(Error::dims("network architecture does not match dims and rank"));
            }
            arch.validate()?;
            let f = mlp_flops(arch);
            breakdown.push(CostItem {
                phase: Phase::Init,
                label: format!("network weights ({} real flops / 6)", f.weight_flops),
                primitive: Primitive::MatMul {
                    m: arch.output_dim() as u64,
                    n: arch.input_dim() as u64,
                    l: 1,
                },
                count: f.layers.len() as u64,
                cflops: f.cflops,
            });
            mlp = Some(f);
        }
    }

    let sum = |p: Phase| breakdown.iter().filter(|i| i.phase == p).map(|i| i.cflops).sum::<u64>();
    let init_cflops = sum(Phase::Init);
    let per_iteration_cflops = sum(Phase::Iteration);
    Ok(CostReport {
        dims: dims.to_vec(),
        rank,
        iterations,
        method,
        init_cflops,
        per_iteration_cflops,
        total_cflops: init_cflops + iterations as u64 * per_iteration_cflops,
        breakdown,
        mlp,
    })
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "dims {:?}, rank {}, init {}, {} iterations",
            self.dims, self.rank, self.method, self.iterations
        )?;
        writeln!(f, "{:<10} {:<42} {:>6} {:>12}", "phase", "item", "count", "cflops")?;
        for i in &self.breakdown {
            let phase = match i.phase {
                Phase::Init => "init",
                Phase::Iteration => "iteration",
            };
            writeln!(f, "{:<10} {:<42} {:>6} {:>12}", phase, i.label, i.count, i.cflops)?;
        }
        if let Some(m) = &self.mlp {
            for (k, (i, o, w)) in m.layers.iter().enumerate() {
                writeln!(f, "network layer {k}: {i} -> {o}, {w} weight flops, {o} bias flops")?;
            }
            writeln!(
                f,
                "network real flops: {} weights + {} biases; {} kilo-cflops from weights",
                m.weight_flops,
                m.bias_flops,
                m.cflops as f64 / 1e3
            )?;
        }
        writeln!(f, "init:          {:>10.3} kilo-cflops", self.init_cflops as f64 / 1e3)?;
        writeln!(f, "per iteration: {:>10.3} kilo-cflops", self.per_iteration_cflops as f64 / 1e3)?;
        write!(f, "total:         {:>10.3} kilo-cflops", self.total_cflops as f64 / 1e3)
    }
}
